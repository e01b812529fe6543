"""EEG trial containers, preprocessing, synthetic data and file formats."""
from advfilter.eegdata.io import (
    export_csv,
    import_csv,
    load_dataset,
    save_dataset,
)
from advfilter.eegdata.preprocess import (
    PreprocessConfig,
    Recording,
    bandpass,
    downsample,
    epoch,
    preprocess_recording,
    preprocess_trial,
    zscore,
    zscore_array,
    zscore_dataset,
)
from advfilter.eegdata.synthetic import ClassTemplate, SyntheticSpec, make_templates, synthesize
from advfilter.eegdata.types import EegDataset, EegTrial

__all__ = [
    "ClassTemplate",
    "EegDataset",
    "EegTrial",
    "PreprocessConfig",
    "Recording",
    "SyntheticSpec",
    "bandpass",
    "downsample",
    "epoch",
    "export_csv",
    "import_csv",
    "load_dataset",
    "make_templates",
    "preprocess_recording",
    "preprocess_trial",
    "save_dataset",
    "synthesize",
    "zscore",
    "zscore_array",
    "zscore_dataset",
]
