"""
Выведение подсидов из единого seed

Вся случайность проекта происходит от одного целого seed и строки назначения,
поэтому любую часть конвейера можно воспроизвести независимо.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, purpose: str) -> int:
    """
    Выводит подсид из seed и строки назначения

    Args:
        seed: Основной seed
        purpose: Назначение ("entry-3", "shuffle-12", ...)

    Returns:
        64-битное беззнаковое целое
    """
    digest = hashlib.blake2b(f"{int(seed)}:{purpose}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, purpose: str) -> np.random.Generator:
    """Создаёт генератор numpy для заданного назначения"""
    return np.random.default_rng(derive_seed(seed, purpose))
