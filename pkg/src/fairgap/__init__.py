"""Statistical and causal gender-gap auditing and pre-processing debiasers for text classifiers."""

__version__ = "0.1.0"

from fairgap.corpus import Dataset, Document, Gender, load_jsonl, save_jsonl  # noqa: E402
from fairgap.perturb import GenderLexicon, default_lexicon, detect_gender, perturb  # noqa: E402

__all__ = [
    "Dataset",
    "Document",
    "Gender",
    "GenderLexicon",
    "default_lexicon",
    "detect_gender",
    "load_jsonl",
    "perturb",
    "save_jsonl",
]
