# core/autoencoder.py
"""Dense autoencoder 96 -> 64 -> 32 -> 2 -> 32 -> 64 -> 96 in float64 torch."""
import copy
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from torch import nn

from utils.errors import ProjectionError

HIDDEN = (64, 32)
LATENT = 2


class FeatureAutoencoder(nn.Module):
    def __init__(self, input_dim: int = 96):
        super().__init__()
        h1, h2 = HIDDEN
        self.encoder = nn.Sequential(
            nn.Linear(input_dim, h1), nn.Tanh(),
            nn.Linear(h1, h2), nn.Tanh(),
            nn.Linear(h2, LATENT),
        )
        self.decoder = nn.Sequential(
            nn.Linear(LATENT, h2), nn.Tanh(),
            nn.Linear(h2, h1), nn.Tanh(),
            nn.Linear(h1, input_dim),
        )
        self.double()

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


@dataclass
class TrainingReport:
    initial_loss: float
    final_loss: float
    best_epoch: int
    epochs: int


def state_to_lists(model: nn.Module) -> Dict[str, list]:
    return {k: v.detach().cpu().numpy().tolist() for k, v in model.state_dict().items()}


def model_from_lists(state: Dict[str, list], input_dim: int = 96) -> FeatureAutoencoder:
    model = FeatureAutoencoder(input_dim)
    model.load_state_dict(OrderedDict(
        (k, torch.tensor(np.asarray(v), dtype=torch.float64)) for k, v in state.items()
    ))
    model.eval()
    return model


def reconstruction_loss(model: nn.Module, x: torch.Tensor) -> float:
    with torch.no_grad():
        return float(nn.functional.mse_loss(model(x), x))


def train_autoencoder(training: np.ndarray, epochs: int, lr: float = 1e-3, batch_size: int = 32,
                      seed: int = 0, prior: Optional[FeatureAutoencoder] = None
                      ) -> Tuple[FeatureAutoencoder, TrainingReport]:
    """
    Adam on mean-squared reconstruction error. With `prior` the weights start
    from it (fine-tuning). The lowest-loss state seen is returned, so the
    final loss never exceeds the initial one.
    """
    data = np.atleast_2d(np.asarray(training, dtype=np.float64))
    x = torch.from_numpy(data)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = copy.deepcopy(prior) if prior is not None else FeatureAutoencoder(data.shape[1])
    model.double()

    initial = reconstruction_loss(model, x)
    if not np.isfinite(initial):
        raise ProjectionError(f"non-finite initial loss (lr={lr}, epoch=0)")
    best_loss, best_state, best_epoch = initial, copy.deepcopy(model.state_dict()), 0

    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    criterion = nn.MSELoss()
    rng = np.random.default_rng(seed)
    n = data.shape[0]

    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = x[torch.from_numpy(order[start:start + batch_size])]
            optimizer.zero_grad()
            loss = criterion(model(batch), batch)
            if not torch.isfinite(loss):
                raise ProjectionError(f"non-finite autoencoder loss (lr={lr}, epoch={epoch})")
            loss.backward()
            optimizer.step()

        epoch_loss = reconstruction_loss(model, x)
        if not np.isfinite(epoch_loss):
            raise ProjectionError(f"non-finite autoencoder loss (lr={lr}, epoch={epoch})")
        if epoch_loss < best_loss:
            best_loss, best_state, best_epoch = epoch_loss, copy.deepcopy(model.state_dict()), epoch

    model.load_state_dict(best_state)
    model.eval()
    logging.info(f"[Autoencoder] {epochs} epochs: loss {initial:.6f} -> {best_loss:.6f} (best epoch {best_epoch})")
    return model, TrainingReport(initial, best_loss, best_epoch, epochs)
