"""Closed tag vocabulary shared by the annotation pipeline and the denoiser.

Two tiers: semantic tags describe the subject, photographic tags describe
how the shot was taken. The denoiser's embedding table is built over the
union; the empty tag list denotes the null prompt.
"""

from __future__ import annotations

SEMANTIC_TAGS = (
    # age bands
    "young adult",
    "middle aged",
    "elderly",
    # accessories
    "glasses",
    "no accessories",
    # expression
    "smiling",
    "neutral expression",
)

PHOTOGRAPHIC_TAGS = (
    # lighting style
    "soft lighting",
    "hard lighting",
    # focus / sharpness
    "sharp focus",
    "soft focus",
    # skin texture
    "smooth skin",
    "textured skin",
    # makeup
    "natural makeup",
    "no makeup",
)

VOCABULARY = SEMANTIC_TAGS + PHOTOGRAPHIC_TAGS
_INDEX = {tag: i for i, tag in enumerate(VOCABULARY)}


def tag_indices(tags: list[str] | tuple[str, ...]) -> list[int]:
    """Map tag strings to vocabulary indices, rejecting unknown tags."""
    out = []
    for tag in tags:
        if tag not in _INDEX:
            raise ValueError(f"unknown tag {tag!r}")
        out.append(_INDEX[tag])
    return out


def validate_tags(tags: list[str] | tuple[str, ...]) -> list[str]:
    tag_indices(tags)
    return list(tags)
