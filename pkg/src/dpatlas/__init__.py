"""dpatlas: data-driven per-region probabilistic atlas dictionaries.

Learns, from a co-registered training population, a per-region dictionary of
cluster-averaged probabilistic atlases keyed by masked anatomical templates,
and instantiates a personalized whole-volume probabilistic atlas for a new
subject by masked-correlation lookup followed by probability normalization.
"""

__version__ = "0.1.0"

from .apclust import (
    ApConfig,
    ClusteringResult,
    SimilarityMatrix,
    affinity_propagation,
    build_similarity_matrix,
    cluster_region,
    single_cluster_result,
    vertex_similarity,
)
from .applier import (
    PersonalAtlas,
    RegionSelection,
    assemble_atlas,
    pearson_corr,
    personalize,
    select_cluster,
)
from .dictionary import (
    AtlasDictionary,
    RegionalEntry,
    RegionDictionary,
    build_dictionary,
    cluster_anat_template,
    cluster_prob_atlas,
    load_dictionary,
    region_mask,
    save_dictionary,
    tissue_mask,
)
from .fusion import MeanSegmentation, majority_vote
from .metrics import (
    EvalReport,
    WilcoxonResult,
    dice,
    evaluate_atlas,
    js_divergence,
    naive_segmentation,
    region_js,
    wilcoxon_signed_rank,
)
from .phantom import (
    PhantomConfig,
    PhantomSubject,
    PhenotypePopulation,
    generate_population,
    load_population,
    partition_purity,
    save_population,
    split_population,
)
from .shape import (
    CorrespondenceConfig,
    VertexSet,
    boundary_face_centers,
    extract_mean_vertices,
    load_vertices,
    propagate_vertices,
    save_vertices,
)
from .volio import read_volume, write_volume
from .volume import (
    IntensityVolume,
    LabelVolume,
    ProbabilisticAtlas,
    ProbMap,
    VolumeHeader,
    mask_apply,
)
