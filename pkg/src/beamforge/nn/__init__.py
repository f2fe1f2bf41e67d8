"""From-scratch convolutional filter-estimation networks."""
from .checkpoint import load_checkpoint, read_metadata, save_checkpoint
from .model import (Model, ModelKind, ParamStore, build_model, enhance, filter_loss,
                    integrate_attention, integrate_concat, loss_and_grad, loss_mse_complex,
                    model_backward, model_forward)
from .optim import AdamConfig, adam_step
from .train import TrainConfig, train
from .unet import UNetSpec, unet_backward, unet_forward

__all__ = [
    "AdamConfig", "Model", "ModelKind", "ParamStore", "TrainConfig", "UNetSpec",
    "adam_step", "build_model", "enhance", "filter_loss", "integrate_attention",
    "integrate_concat", "load_checkpoint", "loss_and_grad", "loss_mse_complex",
    "model_backward", "model_forward", "read_metadata", "save_checkpoint", "train",
    "unet_backward", "unet_forward",
]
