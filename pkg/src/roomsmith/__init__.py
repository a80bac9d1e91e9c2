"""Text-conditioned indoor scene synthesis and furniture retrieval."""

from .annotations import (
    DescriptionList,
    ObjectTag,
    TaggedAnnotation,
    extract_tags,
    parse_description_list,
    serialize_description_list,
)
from .errors import (
    CapabilityError,
    ConfigurationError,
    DescriptionFormatError,
    GatewayError,
    GatewayTimeoutError,
    GenerationError,
    HttpStatusError,
    LayoutParseError,
    RetrievalError,
    RoomsmithError,
    TransportError,
    ValidationError,
)
from .gateway import (
    BackendConfig,
    ChatRequest,
    EmbedRequest,
    EmbedResponse,
    MockBackend,
    ModelGateway,
    OpenAiHttpBackend,
    RetryPolicy,
    ScoreRequest,
    ScoreResponse,
    mock_gateway,
)
from .layout_css import (
    CssLayoutDocument,
    LayoutValidationReport,
    parse_layout,
    scene_from_dict,
    scene_to_dict,
    serialize_layout,
    validate_layout,
)
from .metrics import (
    EmbeddingSet,
    TfrSample,
    TopKRecord,
    clip_score,
    fid,
    kid,
    sample_negatives,
    score_scene_text,
    tfr,
    tfr_at_k,
    top_k_accuracy,
)
from .pipeline import (
    GenerationRecord,
    PipelineConfig,
    annotation_to_layout,
    generate_descriptions,
    generate_scene,
    prompt_to_annotation,
    synthesize_prompt,
)
from .retrieval import (
    BatchQuery,
    FeatureCache,
    ObjectPrior,
    RankedResult,
    RetrievalConfig,
    RetrievalScore,
    coarse_filter,
    estimate_prior,
    estimate_prior_by_category,
    rank_inventory,
    rerank_with_lambda,
    retrieve,
    retrieve_batch,
    score_object,
    uniform_prior,
)
from .scene import (
    FloorPlan,
    Inventory,
    MeshAsset,
    Rect,
    Scene,
    SceneObject,
    footprint,
    normalize_orientation,
)
from .templates import PromptTemplateSet

__version__ = "0.1.0"
