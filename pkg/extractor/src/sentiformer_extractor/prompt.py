"""The fixed prompt sentence for keyword tags.

This template is a byte-level contract with the sentiment engine's
`sentiformer prompt` command; tests compare the two outputs verbatim.
"""

PROMPT_PREFIX = "the scene or background of the image is "
PROMPT_MIDDLE = ", and the image contains the following objects: "


def build_prompt(scene: str, objects) -> str:
    objects = list(objects)
    if not scene:
        raise ValueError("scene must be nonempty")
    if not objects:
        raise ValueError("at least one object tag is required")
    return PROMPT_PREFIX + scene + PROMPT_MIDDLE + ", ".join(objects)
