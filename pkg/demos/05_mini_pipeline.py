"""
The whole pipeline on a synthetic corpus
========================================

Three synthetic genres (tones, noise, drum patterns), twenty 30-second
clips each, pushed through every file-based stage. The same run is
available from the shell::

    stemgenre mini-corpus corpus/
    stemgenre run --corpus corpus/ --workdir work/ --config mini.json

Takes a few minutes on one core.
"""

import sys
import tempfile
from pathlib import Path

from stemgenre import pipeline
from stemgenre.synth import write_mini_corpus

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
corpus = write_mini_corpus(root / "corpus", clips_per_genre=20)
cfg = pipeline.mini_run_config(corpus, root / "work", seed=0)

pipeline.cmd_prepare(cfg)
pipeline.cmd_featurize(cfg)
pipeline.cmd_train_base(cfg)
for kind in ("logreg", "gbdt"):
    pipeline.cmd_train_meta(cfg, kind)
for selection in ("stack_logreg", "stack_gbdt", "mean", "soft_vote", "ignore_vocal", "ignore_accomp"):
    pipeline.cmd_evaluate(cfg, selection)
pipeline.cmd_report(cfg)

print((root / "work" / "reports" / "table.md").read_text())
print("artifacts under", root / "work")
