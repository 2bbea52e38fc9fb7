"""High-level API for minidrm."""

from minidrm.api.highlevel import (
    PlaybackResult,
    load_or_create_seed,
    pack_file,
    play_content,
    resume_content,
)

__all__ = ["PlaybackResult", "load_or_create_seed", "pack_file", "play_content", "resume_content"]
