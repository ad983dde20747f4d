"""promptdag: joint prompt selection for multi-agent DAG pipelines.

The library scores per-agent prompt candidates and hand-off compatibility,
selects the jointly best prompt set by exact max-product inference (via a
junction tree for non-tree pipelines), and refines the candidate pools from
execution feedback until improvement plateaus.
"""

from .errors import (
    CycleError,
    DuplicateTaskIdError,
    ExecutorFailure,
    FactorHomelessError,
    FrozenStateError,
    GatewayError,
    GatewayTimeout,
    GraphValidationError,
    HttpStatusError,
    MalformedRecordError,
    MalformedReplyError,
    MissingScoreError,
    ParseError,
    PromptDagError,
    SchemaMismatchError,
    ScorerUnavailableError,
    TooLargeError,
    TransportError,
    UnknownAgentError,
    ValidationError,
    VariantCountMismatchError,
)
from .executors import (
    CommandExecutor,
    Executor,
    LLMExecutor,
    MockExecutor,
    TranscriptEntry,
    Verdict,
    execute_assignment,
    execute_batch,
)
from .gateway import ChatGateway, ChatReply, ChatRequest
from .inference import (
    Assignment,
    Clique,
    JunctionTree,
    MessageRecord,
    SolveTrace,
    brute_force_map,
    build_junction_tree,
    elimination_cliques,
    message_count,
    moralize,
    solve,
    solve_junction_tree,
    solve_tree,
    triangulate,
)
from .orchestrator import (
    BestSelection,
    IterationRecord,
    OptimizationState,
    build_score_tables,
    initialize,
    restore,
    run_iteration,
    run_loop,
    snapshot,
)
from .refinement import (
    GlobalFeedback,
    LanguageJudge,
    LLMJudge,
    LocalFeedback,
    MockJudge,
    MutationAction,
    TerminationPolicy,
    collect_global_feedback,
    collect_local_feedback,
    mutate_pool,
    should_terminate,
    update_preferences,
)
from .scoring import (
    Demonstration,
    EdgeScoreTable,
    ExpectedIO,
    LLMRewardScorer,
    MockRewardScorer,
    NodeScoreTable,
    PreferencePool,
    RewardScorer,
    Score,
    ScoreCache,
    joint_quality_score,
    parse_score_lines,
)
from .tasks import Task, TaskBatch, Verifier, ingest_tasks
from .topology import (
    Agent,
    AgentGraph,
    AgentId,
    PromptCandidate,
    PromptPool,
    add_edge,
    graph_from_document,
    graph_to_document,
    make_graph,
    pool_from_texts,
    reverse,
    topological_order,
)

__version__ = "0.1.0"
