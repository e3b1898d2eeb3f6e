"""A tour of the synthetic world the tests and tutorials train on.

Run from anywhere:  python3 tutorials/01_synthetic_world.py
"""

import tempfile
from pathlib import Path

import numpy as np

from tvsl.data import SyntheticWorld, SyntheticWorldSpec, generate_synthetic_world, mix_k_sources
from tvsl.pipeline import Backbone

spec = SyntheticWorldSpec(n_train=40, n_test=10, seed=0)
world = SyntheticWorld(spec)
print(spec.class_names)  # eight classes, N=8
print(world.vocabulary.names == spec.class_names)

# one solo clip: a 224x224 frame with the object in a random quadrant plus a spectrogram
rng = np.random.default_rng(0)
solo = world.render_solo(spec.class_names[0], rng, "demo-0")
solo.frame.shape, solo.audio.shape
print(solo.classes, solo.boxes)

# duets concatenate frames side by side and add the audio power
other = world.render_solo(spec.class_names[3], rng, "demo-1")
duet = mix_k_sources([solo, other], "demo-duet")
print(duet.frame.shape, duet.K, duet.boxes)  # the second box is shifted right by one frame width

# the frozen encoders turn pixels and spectrograms into patch tokens
backbone = Backbone.from_world(world)
a, v = backbone.encode(duet)
print("audio tokens", a.tokens.shape, a.grid)
print("visual tokens", v.tokens.shape, v.grid)

# cosine between each visual token and each class prototype shows where the classes live
proto = world.text_prototypes
vt = v.tokens / np.linalg.norm(v.tokens, axis=1, keepdims=True)
sims = (vt @ proto.T).reshape(v.grid + (-1,))
for name in duet.classes:
    i = world.class_index(name)
    print(name)
    print(np.round(sims[..., i], 2))

# write the whole world to disk: manifests, PNG frames, raw spectrograms, vocabularies
root = Path(tempfile.mkdtemp()) / "world"
train, test = generate_synthetic_world(spec, root)
print(len(train.records), len(test.records))
print(sorted(p.name for p in root.iterdir()))
