"""Definition-augmented few-shot NER via LLM prompting.

Pipeline: ingest BIO corpora, assemble prompts from an entity-definition
document and worked exemplars, obtain completions from a pluggable backend,
parse the candidate-entity lines, ground predictions to token spans, and
score with strict micro-F1. A harness orchestrates multi-run experiments
and the four-flag ablation matrix.
"""

from .align import GroundedPrediction, GroundingReport, ground, spans_to_tags
from .backend import (AuthError, Backend, BackendError, CacheKey, CacheMiss,
                      CompletionCache, CompletionRequest, CompletionResult,
                      GoldEchoBackend, MockBackend, RateLimited, RecordingBackend,
                      RemoteBackend, RemoteConfig, ReplayBackend, TransportError)
from .corpus import (Corpus, EntitySpan, InsufficientData, LabeledExample,
                     MalformedLine, Token, UnknownType, detokenize, load_manifest,
                     parse_bio, sample_eval, sample_exemplars, tags_to_spans)
from .evaluation import (AggregateReport, Disagreement, EmptyInput, EvalReport,
                         LengthMismatch, aggregate, entity_set_diff, micro_f1,
                         sample_disagreements, write_disagreements)
from .harness import (ABLATION_ROWS, AblationMatrix, ResultRow, RunConfig,
                      config_fingerprint, fractional_ranks, load_run_config,
                      rescore_run, run_ablation, run_experiment)
from .parse import (CandidateEntity, EmptyParse, ParseReport, canonicalize_type,
                    extract_predictions, parse_completion)
from .promptgen import (ConfigMismatch, DefinitionDoc, PromptConfig, RenderedPrompt,
                        render_exemplar_answer, render_prompt)

__version__ = "0.1.0"
