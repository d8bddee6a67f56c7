# modules/run_report.py
"""Single-page HTML summary of a finished run."""
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict

from jinja2 import Environment, select_autoescape

REPORT_TEMPLATE = """<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Run {{ label }}</title>
<style>
 body { font-family: sans-serif; margin: 2em; background: #fafafa; color: #222; }
 table { border-collapse: collapse; margin-bottom: 1.5em; }
 td, th { border: 1px solid #ccc; padding: 4px 10px; text-align: left; }
 img { max-width: 640px; display: block; margin-bottom: 1em; }
</style>
</head>
<body>
<h1>Run {{ label }}</h1>
<p>config hash <code>{{ config_hash }}</code></p>

<h2>Final metrics</h2>
<table>
{% for key, value in summary %}
 <tr><th>{{ key }}</th><td>{{ value }}</td></tr>
{% endfor %}
</table>

<h2>Configuration</h2>
{% for section, values in config.items() %}
<h3>[{{ section }}]</h3>
<table>
{% for key, value in values.items() %}
 <tr><th>{{ key }}</th><td>{{ value }}</td></tr>
{% endfor %}
</table>
{% endfor %}

{% if plots %}
<h2>Plots</h2>
{% for name, path in plots.items() %}
<h3>{{ name }}</h3>
<img src="{{ path }}" alt="{{ name }}">
{% endfor %}
{% endif %}
</body>
</html>
"""

_env = Environment(autoescape=select_autoescape(default=True, default_for_string=True))


def render_run_report(config, report, plots: Dict[str, str]) -> str:
    summary = []
    for key, value in asdict(report).items():
        if key == "run_dir":
            continue
        if isinstance(value, float):
            value = f"{value:.6f}"
        elif isinstance(value, list):
            value = ", ".join(str(v) for v in value) or "-"
        summary.append((key.replace("_", " "), value))
    return _env.from_string(REPORT_TEMPLATE).render(
        label=config.run.label or config.run.output_dir,
        config_hash=config.config_hash(),
        summary=summary,
        config=config.to_dict(),
        plots=plots,
    )


def write_run_report(run_dir, config, report, plots: Dict[str, str]) -> Path:
    path = Path(run_dir) / "report.html"
    path.write_text(render_run_report(config, report, plots), encoding="utf-8")
    logging.info(f"[Report] Written {path}")
    return path
