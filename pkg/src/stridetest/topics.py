"""MQTT topic name and topic filter handling.

Topic names are plain, wildcard-free strings; filters may use ``+`` for a
single level and a trailing ``#`` for all remaining levels, per MQTT 3.1.1
section 4.7.
"""

from __future__ import annotations

MAX_TOPIC_BYTES = 65535


def is_valid_topic(topic: str) -> bool:
    """A publishable topic: non-empty, no wildcards, no NUL."""
    if not topic or len(topic.encode("utf-8")) > MAX_TOPIC_BYTES:
        return False
    return not any(c in topic for c in ("+", "#", "\x00"))


def is_valid_filter(topic_filter: str) -> bool:
    """A subscription filter: ``+`` alone in a level, ``#`` only last."""
    if not topic_filter or len(topic_filter.encode("utf-8")) > MAX_TOPIC_BYTES:
        return False
    if "\x00" in topic_filter:
        return False
    levels = topic_filter.split("/")
    for i, level in enumerate(levels):
        if "#" in level:
            if level != "#" or i != len(levels) - 1:
                return False
        if "+" in level and level != "+":
            return False
    return True


def filter_matches(topic_filter: str, topic: str) -> bool:
    """Whether a topic name matches a filter.

    ``a/#`` matches ``a``, ``a/b``, ``a/b/c``; ``+`` matches exactly one
    level. Assumes both arguments are syntactically valid.
    """
    filter_levels = topic_filter.split("/")
    topic_levels = topic.split("/")
    for i, flevel in enumerate(filter_levels):
        if flevel == "#":
            # trailing "#" covers the parent level itself and anything below
            return len(topic_levels) >= i
        if i >= len(topic_levels):
            return False
        if flevel != "+" and flevel != topic_levels[i]:
            return False
    return len(topic_levels) == len(filter_levels)
