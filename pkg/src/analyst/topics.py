"""
Polarity-Bearing Topic Tables
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from src.corpus.vocabulary import Vocabulary


@dataclass
class TopicTable:
    grid: List[float]
    words: np.ndarray  # K x len(grid) x N term indices

    @property
    def n_topics(self) -> int:
        return self.words.shape[0]

    def cell(self, k: int, g: int) -> List[int]:
        return self.words[k, g].tolist()

    def neutral_topics(self) -> List[List[int]]:
        """Top words at the grid point closest to x = 0, used for coherence and uniqueness."""
        g = int(np.argmin(np.abs(np.asarray(self.grid))))
        return [self.cell(k, g) for k in range(self.n_topics)]

    def to_dict(self, vocab: Vocabulary) -> Dict:
        return {"grid": list(self.grid),
                "topics": [{"topic": k,
                            "cells": [{"x": x, "words": [vocab.terms[i] for i in self.cell(k, g)]}
                                      for g, x in enumerate(self.grid)]}
                           for k in range(self.n_topics)]}


def topic_top_words(beta: np.ndarray, eta: np.ndarray, x_grid: Sequence[float], N: int = 10) -> TopicTable:
    """
    Top-N words of every topic at every polarity grid point

    Args:
        beta: K x V topic-word means
        eta: K x V topic-word offsets
        x_grid: Polarity values in [-1, 1]
        N: Words per cell (clamped to V)

    Returns:
        TopicTable ranked by beta_kv * exp(x * eta_kv), ties broken by term index
    """
    beta = np.asarray(beta, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if beta.shape != eta.shape:
        raise ValueError(f"beta {beta.shape} and eta {eta.shape} differ in shape")
    grid = [float(x) for x in x_grid]
    if any(x < -1.0 or x > 1.0 for x in grid):
        raise ValueError(f"polarity grid values must lie in [-1, 1], got {grid}")
    N = min(int(N), beta.shape[1])

    cells = np.empty((beta.shape[0], len(grid), N), dtype=np.int64)
    for g, x in enumerate(grid):
        scores = beta * np.exp(x * eta)
        cells[:, g, :] = np.argsort(-scores, axis=1, kind="stable")[:, :N]
    return TopicTable(grid=grid, words=cells)


def render_topic_grid(table: TopicTable, vocab: Vocabulary) -> str:
    """Plain-text grid: a block per topic, one row per polarity grid point."""
    lines = []
    for k in range(table.n_topics):
        lines.append(f"Topic {k}")
        for g, x in enumerate(table.grid):
            lines.append(f"  x={x:+.2f} | " + ", ".join(vocab.terms[i] for i in table.cell(k, g)))
        lines.append("")
    return "\n".join(lines)


def save_topic_table(table: TopicTable, vocab: Vocabulary, out_dir: Union[str, Path], name: str) -> Dict[str, Path]:
    """Write <name>.json and <name>.txt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path, txt_path = out_dir / f"{name}.json", out_dir / f"{name}.txt"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(table.to_dict(vocab), f, indent=2, ensure_ascii=False)
    with open(txt_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_topic_grid(table, vocab))
    return {"json": json_path, "txt": txt_path}
