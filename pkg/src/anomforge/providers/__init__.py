from anomforge.providers.base import (
    EmbeddingProvider,
    EmbeddingVector,
    InpaintingProvider,
    RasterImage,
    Rect,
    Region,
    RegionProvider,
    VQAProvider,
    DescriptionProvider,
    describe,
    embed_image,
    embed_text,
    inpaint,
    propose_regions,
    vqa_answer,
)
from anomforge.providers.mock import (
    EchoTruthVQAProvider,
    FixedAnswerVQAProvider,
    FixtureRegionProvider,
    MockDescriptionProvider,
    MockEmbeddingProvider,
    MockInpaintingProvider,
)

__all__ = [
    "EmbeddingProvider",
    "EmbeddingVector",
    "InpaintingProvider",
    "RasterImage",
    "Rect",
    "Region",
    "RegionProvider",
    "VQAProvider",
    "DescriptionProvider",
    "describe",
    "embed_image",
    "embed_text",
    "inpaint",
    "propose_regions",
    "vqa_answer",
    "EchoTruthVQAProvider",
    "FixedAnswerVQAProvider",
    "FixtureRegionProvider",
    "MockDescriptionProvider",
    "MockEmbeddingProvider",
    "MockInpaintingProvider",
]
