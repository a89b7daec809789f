from .discriminator import Discriminator, DiscriminatorFeatures
from .hyface import (
    SUBMODULES,
    HYFaceVC,
    LatentSequence,
    SpeakerEmbedding,
    af_predict,
    build_af,
    build_discriminator,
    decode_waveform,
    discriminate,
    face_encode,
    ff_predict,
    flow_forward,
    flow_inverse,
    nsf_source,
    posterior_encode,
    prior_encode,
)
from .vit import AverageF0Net

__all__ = [
    "SUBMODULES",
    "AverageF0Net",
    "Discriminator",
    "DiscriminatorFeatures",
    "HYFaceVC",
    "LatentSequence",
    "SpeakerEmbedding",
    "af_predict",
    "build_af",
    "build_discriminator",
    "decode_waveform",
    "discriminate",
    "face_encode",
    "ff_predict",
    "flow_forward",
    "flow_inverse",
    "nsf_source",
    "posterior_encode",
    "prior_encode",
]
