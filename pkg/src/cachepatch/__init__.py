"""cachepatch: search-based line patching that reduces L1 data-cache misses.

The library side is organized bottom-up:

* ``cachesim``/``tracelang`` -- deterministic set-associative LRU cache
  model and the trace DSL whose programs serve as measurable targets;
* ``source_model``/``operators`` -- line rosters, patches and the random
  edit neighbourhood;
* ``evaluation``/``drivers`` -- the four fitness gates over a measurement
  backend (simulator or external subprocess pipeline);
* ``search``/``stats`` -- warm-up, budgeted local search, tabu store,
  minification, and the robust statistics they share;
* ``cli``/``config`` -- the command-line front end.
"""

from .cachesim import Access, CacheConfig, CacheStats, LRUCache, simulate, simulate_addresses
from .drivers import (
    Artifact,
    CompileError,
    ExternalDriver,
    ExternalDriverConfig,
    NoiseConfig,
    RunResult,
    SimDriver,
    SimDriverConfig,
    parse_counter_output,
)
from .evaluation import (
    FitnessRecord,
    GateOutcome,
    GateStatus,
    Ordering,
    TestCase,
    compare_fitness,
    evaluate,
    load_suite,
    summarize_metric,
)
from .operators import RngHandle, neighbor, sample_edit
from .search import (
    SearchConfig,
    SearchResult,
    TabuStore,
    WarmupReport,
    coupon_budget,
    local_search,
    minify,
    warm_up,
)
from .source_model import (
    Edit,
    EditKind,
    Patch,
    SourceRoster,
    StripPolicy,
    apply_patch,
    format_patch,
    ingest_source,
    parse_patch,
    roster_from_texts,
)
from .stats import (
    DriftReport,
    MannWhitneyResult,
    coverage_probability,
    drift_check,
    mann_whitney,
    quartile1,
)
from .tracelang import (
    AccessLimitExceeded,
    TraceParseError,
    TraceProgram,
    TraceRuntimeError,
    canonical_bytes,
    parse_trace_program,
    run_trace_program,
)

__version__ = "0.1.0"
