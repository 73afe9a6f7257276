"""Conditional masked-diffusion accompaniment generation, desk scale.

A self-contained study system: float64 numpy autodiff, a bidirectional
transformer over a fused dual-track representation, masked-modeling plus
replaced-token-detection training, low-confidence remasking inference, and
an exactly solvable synthetic vocal/accompaniment grammar to validate the
whole pipeline against brute-force oracles.
"""

from .config import RunConfig, resolve
from .corruption import CorruptionRecord, TokenSeq, mask_forward, rtd_corrupt
from .model import (
    Predictor,
    PredictorConfig,
    ar_forward,
    count_params,
    encode_tokens,
    forward,
    full_scale_config,
)
from .representation import Condition, ConditionPrefix, build_input, build_prefix, embed_dual
from .sampling import GenerateResult, SamplerParams, ar_generate, generate
from .schedules import LrSchedule, MaskSchedule, SobolEngine, sobol_next
from .synthdata import (
    SynthConfig,
    SynthInstance,
    gen_pair,
    grammar_token,
    invert_style,
    make_dataset,
    oracle_posterior,
)
from .training import (
    CurriculumStage,
    Trainer,
    TrainerConfig,
    cml_loss,
    rtd_loss,
    run_curriculum,
    total_loss,
)

__version__ = "0.1.0"

__all__ = [
    "Condition",
    "ConditionPrefix",
    "CorruptionRecord",
    "CurriculumStage",
    "GenerateResult",
    "LrSchedule",
    "MaskSchedule",
    "Predictor",
    "PredictorConfig",
    "RunConfig",
    "SamplerParams",
    "SobolEngine",
    "SynthConfig",
    "SynthInstance",
    "Trainer",
    "TrainerConfig",
    "TokenSeq",
    "ar_forward",
    "ar_generate",
    "build_input",
    "build_prefix",
    "cml_loss",
    "count_params",
    "embed_dual",
    "encode_tokens",
    "forward",
    "gen_pair",
    "generate",
    "grammar_token",
    "invert_style",
    "make_dataset",
    "mask_forward",
    "oracle_posterior",
    "full_scale_config",
    "resolve",
    "rtd_corrupt",
    "rtd_loss",
    "run_curriculum",
    "sobol_next",
    "total_loss",
]
