from .schedule import NoiseSchedule, diffuse_with, forward_diffuse, make_schedule
from .unet import DenoiserSpec, UNet
from .model import (
    DiffusionConfig,
    DiffusionModel,
    PerClassDiffusion,
    build_model,
    denoising_loss,
    load_checkpoint,
    sample,
    sample_array,
    save_checkpoint,
    train,
    training_step,
)
