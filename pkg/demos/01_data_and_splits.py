"""Loading interactions, per-user splitting and the train-only graph.

Run:  python demos/01_data_and_splits.py
"""

import tempfile
from pathlib import Path

import numpy as np

from rgtrec.data import TRAIN, VAL, TEST, build_graph, load_interactions, split

raw = """\
# toy listening history: <user>\t<artist>
alice\tarcade_fire
alice\tbeach_house
alice\tcaribou
alice\tdaft_punk
bob\tbeach_house
bob\tcaribou
bob\telliott_smith
carol\tdaft_punk
carol\telliott_smith
carol\tarcade_fire
carol\tbeach_house
dave\tarcade_fire
dave\tbeach_house
dave\tcaribou
dave\tdaft_punk
dave\telliott_smith
dave\tfour_tet
dave\tgrimes
dave\tholly_herndon
dave\tjamie_xx
dave\tkelela
dave\tlorde
dave\tmitski
dave\tnilufer_yanya
dave\toneohtrix
dave\tportishead
dave\tquasi
dave\trosalia
dave\tsade
dave\tthom_yorke
dave\tunknown_mortal_orchestra
"""

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "listens.tsv"
    path.write_text(raw)
    ds = load_interactions(path)

print(f"{ds.num_users} users, {ds.num_items} items, {ds.num_interactions} interactions")
print("user tokens:", ds.user_tokens)
print("item tokens:", ds.item_tokens)

# per-user stratified split: each user contributes to every bucket it can;
# users with only a handful of interactions round their 5% val share to zero
ds = split(ds, ratios=(0.7, 0.05, 0.25), seed=42)
for name, code in (("train", TRAIN), ("val", VAL), ("test", TEST)):
    print(f"{name:5s}: {int((ds.split_assignment == code).sum())} interactions")

graph = build_graph(ds)
print(f"\ngraph: {graph.num_nodes} nodes, {graph.num_edges} edges (train only)")
print("degrees:", graph.degree.tolist())

# the held-out interactions are invisible to the graph
held_out = {(int(u), int(ds.num_users + i))
            for s in (VAL, TEST) for u, i in ds.pairs(s)}
graph_edges = {(int(a), int(b)) for a, b in graph.edge_list}
print("held-out edges leaked into the graph:", len(held_out & graph_edges))
