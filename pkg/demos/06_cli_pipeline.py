"""The command-line pipeline end to end, in a temporary directory.

Writes a schema and CSVs, then runs ``train``, ``score`` and ``eval``
exactly as one would from a shell, and shows the files produced.
"""
import tempfile
from pathlib import Path

import pandas as pd

from chad.cli import main
from chad.data import write_decl
from chad.synthetic import mixed_table

work = Path(tempfile.mkdtemp(prefix="chad-demo-"))
df, decl = mixed_table(n_normal=1500, n_anomaly=300, seed=1)
df[df.label == "normal"].drop(columns="label").to_csv(work / "train.csv", index=False)
df.to_csv(work / "labeled.csv", index=False)
df.drop(columns="label").sample(n=200, random_state=0).to_csv(work / "new.csv", index=False)
write_decl(decl, work / "schema.ini")
(work / "run.ini").write_text(f"""[run]
seed = 1
out = {work / 'out'}
[data]
schema = {work / 'schema.ini'}
train = {work / 'train.csv'}
labeled = {work / 'labeled.csv'}
[train]
batch_size = 128
phase1_epochs = 20
phase2_epochs = 6
phase3_epochs = 10
[experiment]
n_runs = 2
n_anomaly_sets = 3
""")

for argv in (["train", "--config", work / "run.ini"],
             ["score", "--model", work / "out/model.chad", "--data", work / "new.csv",
              "--threshold", "0.5", "--sorted", "--out", work / "out"],
             ["eval", "--config", work / "run.ini", "--with-fae-r"]):
    print("$ chad", " ".join(str(a) for a in argv))
    code = main([str(a) for a in argv])
    print(f"exit {code}\n")

print("files:", sorted(p.name for p in (work / "out").iterdir()))
print(pd.read_csv(work / "out/scores.csv").head(8).to_string(index=False))
