from bfmd.pipeline.clipio import read_clip, write_clip
from bfmd.pipeline.modality import ModalityTrack, load_sidecar, position_from_bbox, save_sidecar
from bfmd.pipeline.samples import MAX_CAPTION_TOKENS, FileClipRef, ShotSample, build_sample
from bfmd.pipeline.split import split_dataset
from bfmd.pipeline.synth import SynthCorpus, synth_generate
from bfmd.pipeline.vocab import BOS, EOS, PAD, UNK, Vocabulary
from bfmd.pipeline.windows import WINDOW, clip_window

__all__ = [
    "BOS",
    "EOS",
    "MAX_CAPTION_TOKENS",
    "PAD",
    "UNK",
    "WINDOW",
    "FileClipRef",
    "ModalityTrack",
    "ShotSample",
    "SynthCorpus",
    "Vocabulary",
    "build_sample",
    "clip_window",
    "load_sidecar",
    "position_from_bbox",
    "read_clip",
    "save_sidecar",
    "split_dataset",
    "synth_generate",
    "write_clip",
]
