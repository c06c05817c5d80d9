"""Lane-level vector map toolkit: token serialization, patch augmentation,
iterative map stitching around a pluggable generator, geo-linking and the
evaluation metric suite."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    EndpointKind,
    GeometryError,
    LineCategory,
    LineRecord,
    LineType,
    PatchFrame,
    Point2,
    SchemaError,
    VectorMap,
    patch_to_world,
    polyline_length,
    vector_map_from_json,
    vector_map_to_json,
    world_to_patch,
)
from .sampling import SamplingConfig, reorder_lines, resample_equidistant  # noqa: F401
from .codec import (  # noqa: F401
    Diagnostic,
    TokenSequence,
    Vocabulary,
    detokenize,
    serialize_map,
    tokenize_raw,
)
from .augment import (  # noqa: F401
    AugmentSweepConfig,
    PatchSample,
    clip_polyline_to_rect,
    crop_patch,
    generate_augmentation_sweep,
    rotate_patch_sample,
)
from .stitch import (  # noqa: F401
    GenRequest,
    GenResponse,
    NoisyOracleGenerator,
    OracleGenerator,
    StitchConfig,
    StitchResult,
    SubprocessGenerator,
    collect_border_context,
    merge_patch,
    oracle_generate,
    plan_patches,
    run_state_update,
    subprocess_generate,
    unmatched_cut_endpoints,
)
from .metrics import (  # noqa: F401
    ApConfig,
    RasterSpec,
    average_precision,
    chamfer_distance,
    evaluate,
    mask_iou,
    miou,
    pseudo_score,
    rasterize,
)
from .geolink import (  # noqa: F401
    GeoPoint,
    PromptMode,
    PvFieldSpec,
    PvPose,
    build_prompt,
    latlon_to_pixel,
    pixel_to_latlon,
    pv_field_crop,
    sample_pv_frames,
)
from .render import render_svg  # noqa: F401
