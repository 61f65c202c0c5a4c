"""Cross-system log anomaly detection with active-learning adaptation.

The pipeline: raw labeled logs are mined into templates, templates are
embedded into a shared vector space, fixed-size event windows are encoded
by a contrastive recurrent encoder into log vectors, an energy-based
classifier trained on a mature source system scores them, and a small
actively-selected budget of target-system windows is labeled round by
round to adapt the classifier to the new system.
"""

from .active import (
    CampaignData,
    CampaignDriver,
    CampaignState,
    GroundTruthOracle,
    InteractiveOracle,
    QueryItem,
    sample_selection,
    select_for_labeling,
)
from .config import ExperimentConfig, config_digest, derive_seed, load_config, save_config
from .corpus import (
    CorpusSplit,
    RawLogRecord,
    derive_default_sidecar,
    load_labeled_log,
    temporal_split,
)
from .embedding import (
    EventEmbedding,
    HashedTokenBackend,
    LMAdapterBackend,
    embed_corpus,
    embed_template,
)
from .encoder import (
    DiscriminatorParams,
    EncoderParams,
    LogVector,
    TrainSchedule,
    binary_alignment_loss,
    contrastive_loss,
    discriminate,
    encode,
    encode_windows,
    export_vectors,
    import_vectors,
    init_discriminator,
    init_encoder,
    train_encoder,
)
from .energy import (
    ClassifierParams,
    EnergyPair,
    SelectionScore,
    class_probabilities,
    energies,
    finetune,
    free_energy,
    init_classifier,
    predict,
    score_pool,
    train_source,
    uncertainty,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateEnergyError,
    EmbeddingBackendError,
    IngestionError,
    LabelingError,
    LogAdaptError,
    ShapeError,
    SnapshotError,
    SplitError,
    StageError,
    TrainingError,
)
from .evaluation import (
    MetricsReport,
    SweepPoint,
    VariantOutcome,
    ablation,
    budget_sweep,
    build_campaign_data,
    ccad_experiment,
    compute_metrics,
    desk_config,
    run_variants_shared,
)
from .parsing import LogTemplate, MinerConfig, TemplateMiner
from .sequencing import EmbeddingTable, LogSequence, build_windows, pool_stats
from .synthetic import SystemSpec, default_pair, generate_fixture, write_synthetic_log

__version__ = "0.1.0"
