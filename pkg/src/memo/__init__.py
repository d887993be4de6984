"""MEMO: a retrieval-augmented skillbook for neuro-symbolic manipulation.

The package is organized around the life cycle of a correction:

- ``dsl`` defines the skill language that grounds subtasks into motion,
  including templatization of successful programs.
- ``embedding`` turns action/object text into the unit vectors used as
  skillbook keys and queries.
- ``skillbook`` is the vector store: weighted-cosine retrieval, snapshot
  isolation, and append-only JSONL persistence.
- ``feedback`` paraphrases raw human corrections and writes them into the
  skillbook.
- ``cluster`` is the offline refinement pass: group, compress, prune.
- ``policy`` is the episode loop: decompose, retrieve, generate, execute,
  templatize on success, ingest feedback on failure.
- ``simenv`` is a deterministic kinematic tabletop world with a task suite
  and a scripted teacher.
- ``modelclient`` provides scripted/replay/remote language-model backends.
- ``cli`` and ``service`` are the operational surfaces.
"""

__version__ = "0.1.0"
