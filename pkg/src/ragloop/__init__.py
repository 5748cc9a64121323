"""ragloop: a budget-limited plan -> search -> reflect agent over a local BM25 corpus.

The package answers single-hop and multi-hop questions through one unified
loop, ships the metrics and benchmark runner to evaluate it, and includes a
forge that distills teacher-model trajectories into conversational training
records with binary loss masks.
"""

__version__ = "0.1.0"

from .agent import (AgentConfig, AgentStep, AgentTrace, FinalAnswer, Search,
                    WorkingMemory, final_answer, parse_step, plan_next,
                    reflect_evidence, render_transcript, run_agent,
                    serialize_memory, trace_from_dict, trace_to_dict)
from .bm25 import (Index, RetrievalResult, bm25_score, build_index, load_index,
                   oracle_retrieve, save_index, search)
from .corpus import Corpus, CorpusStats, Passage, ingest_corpus
from .evaluation import (MetricReport, QAExample, extract_short_answer,
                         judge_score, load_qa_dataset, run_benchmark)
from .forge import (ForgeConfig, GeneratedQuestion, PassagePair,
                    SolutionAnnotation, TrainingRecord, annotate_solution,
                    emit_training_records, generate_question, masked_loss,
                    question_type_stats, run_forge, select_supporting,
                    verify_annotation)
from .llm import (ChatMessage, GenerationParams, RemoteBackend,
                  ScriptedBackend, ScriptedResponse, chat, make_scripted)
from .metrics import (accuracy_contains, bleu, exact_match, normalize_answer,
                      rouge_l, token_f1)
from .prompts import TemplateRegistry, load_registry
from .rerank import HttpEmbedder, rerank
from .tokenization import TokenizerConfig, tokenize

__all__ = [
    "AgentConfig", "AgentStep", "AgentTrace", "FinalAnswer", "Search",
    "WorkingMemory", "final_answer", "parse_step", "plan_next",
    "reflect_evidence", "render_transcript", "run_agent", "serialize_memory",
    "trace_from_dict", "trace_to_dict",
    "Index", "RetrievalResult", "bm25_score", "build_index", "load_index",
    "oracle_retrieve", "save_index", "search",
    "Corpus", "CorpusStats", "Passage", "ingest_corpus",
    "MetricReport", "QAExample", "extract_short_answer", "judge_score",
    "load_qa_dataset", "run_benchmark",
    "ForgeConfig", "GeneratedQuestion", "PassagePair", "SolutionAnnotation",
    "TrainingRecord", "annotate_solution", "emit_training_records",
    "generate_question", "masked_loss", "question_type_stats", "run_forge",
    "select_supporting", "verify_annotation",
    "ChatMessage", "GenerationParams", "RemoteBackend", "ScriptedBackend",
    "ScriptedResponse", "chat", "make_scripted",
    "accuracy_contains", "bleu", "exact_match", "normalize_answer", "rouge_l",
    "token_f1",
    "TemplateRegistry", "load_registry",
    "HttpEmbedder", "rerank",
    "TokenizerConfig", "tokenize",
]
