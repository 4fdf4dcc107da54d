"""Regenerates tests/data fixtures from the reference Python implementations.

hf_tiny_gpt2/      tiny randomly initialised GPT-2 saved with save_pretrained,
                   plus the logits it produces for a fixed id sequence.
bpe_toy/           byte-level BPE trained with the tokenizers library, plus
                   encodings of a few probe strings.

Usage: python3 tools/make_fixtures.py [out_dir]
"""
import json
import os
import sys

import torch
from tokenizers import Tokenizer, models, pre_tokenizers, decoders, trainers
from transformers import GPT2Config, GPT2LMHeadModel

out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "tests", "data")

torch.manual_seed(1234)
cfg = GPT2Config(vocab_size=96, n_positions=32, n_embd=32, n_layer=2, n_head=4,
                 resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0,
                 layer_norm_epsilon=1e-5, activation_function="gelu_new", initializer_range=0.2)
model = GPT2LMHeadModel(cfg).eval()
with torch.no_grad():
    for name, p in model.named_parameters():
        if name.endswith(".bias") or "ln_" in name:
            p.add_(0.1 * torch.randn_like(p))
hf_dir = os.path.join(out, "hf_tiny_gpt2")
model.save_pretrained(hf_dir, safe_serialization=True)
ids = [[5, 17, 42, 3, 88, 60, 1, 0, 95, 33, 12, 7]]
with torch.no_grad():
    logits = model(torch.tensor(ids)).logits[0]
with open(os.path.join(hf_dir, "expected.json"), "w") as f:
    json.dump({"ids": ids[0], "n_heads": cfg.n_head, "logits": logits.tolist()}, f)

corpus = [
    "the quick brown fox jumps over the lazy dog. ",
    "It's a lovely day, isn't it? We'll see what they've done.",
    "numbers 12345 and 678 appear   here\twith tabs\nand newlines.",
    "café naïve résumé -- punctuation!!! (parens) [brackets]",
] * 20
tok = Tokenizer(models.BPE())
tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=True)
tok.decoder = decoders.ByteLevel()
trainer = trainers.BpeTrainer(vocab_size=400, min_frequency=2, show_progress=False,
                              initial_alphabet=pre_tokenizers.ByteLevel.alphabet())
tok.train_from_iterator(corpus, trainer)
bpe_dir = os.path.join(out, "bpe_toy")
os.makedirs(bpe_dir, exist_ok=True)
tok.model.save(bpe_dir)
probes = [
    "the quick brown fox",
    "It's lovely, isn't it?",
    "they've done 12345 things",
    "  leading spaces and trailing  ",
    "tabs\tand\nnewlines\n\n",
    "café résumé!!!",
    "zebra quokka",
    "",
]
with open(os.path.join(bpe_dir, "expected.json"), "w") as f:
    json.dump([{"text": p, "ids": tok.encode(p).ids} for p in probes], f, ensure_ascii=False)
print("fixtures written to", os.path.abspath(out))
