"""Melody classification from symbolic music via performance-event sequences."""

from .notes import Note, NoteSequence, is_monophonic, normalize

__version__ = "0.1.0"

__all__ = ["Note", "NoteSequence", "is_monophonic", "normalize"]
