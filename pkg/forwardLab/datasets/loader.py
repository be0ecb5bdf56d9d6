"""
Mini-batch loader with background prefetching.

Batch order and every batch's augmentation seed are drawn on the calling thread, so the batches of an epoch do
not depend on how many workers prepare them. Workers fill a bounded queue ``prefetch`` batches ahead.
"""

import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .transforms import TrainAugment, normalize


logger = logging.getLogger(__name__)

_DONE = object()


class BatchLoader:
    """
    Yields normalized ``(images, labels)`` batches of one dataset split.

    Args:
        dataset (Dataset): Split to iterate.
        batch_size (int): Images per batch; the last batch may be smaller.
        order_rng (numpy.random.Generator | None): Shuffle stream; ``None`` keeps dataset order.
        augment (AugmentSpec | None): Train-time policy; ``None`` or a disabled spec means eval transforms.
        augment_rng (numpy.random.Generator | None): Stream the per-batch augmentation seeds are drawn from.
        dtype: Scalar type of the yielded images.
        workers (int): Preparation threads; forced to 1 when ``deterministic``.
        prefetch (int): Queue bound.
    """

    def __init__(self, dataset, batch_size, order_rng=None, augment=None, augment_rng=None, dtype=np.float64,
                 workers=1, prefetch=4, deterministic=True):
        self.dataset = dataset
        self.batch_size = batch_size
        self.order_rng = order_rng
        self.augment = TrainAugment(augment) if augment is not None and augment.enabled else None
        self.augment_rng = augment_rng if augment_rng is not None else np.random.default_rng(0)
        self.dtype = dtype
        self.workers = 1 if deterministic else max(1, workers)
        self.prefetch = max(1, prefetch)

    def __len__(self):
        return -(-len(self.dataset) // self.batch_size)

    def _order(self):
        if self.order_rng is None:
            return np.arange(len(self.dataset))
        return self.order_rng.permutation(len(self.dataset))

    def prepare(self, indices, seed=None):
        images = self.dataset.pixels(indices, dtype=self.dtype)
        if self.augment is not None:
            images = self.augment(images, np.random.default_rng(seed))
        images = normalize(images, self.dataset.mean, self.dataset.std).astype(self.dtype, copy=False)
        return images, self.dataset.labels[indices]

    def _jobs(self):
        order = self._order()
        for start in range(0, len(order), self.batch_size):
            seed = int(self.augment_rng.integers(2 ** 63)) if self.augment is not None else None
            yield order[start:start + self.batch_size], seed

    def __iter__(self):
        jobs = list(self._jobs())
        buffer = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()

        def produce(executor):
            try:
                for indices, seed in jobs:
                    future = executor.submit(self.prepare, indices, seed)
                    while not stop.is_set():
                        try:
                            buffer.put(future, timeout=0.1)
                            break
                        except queue.Full:
                            continue
                    if stop.is_set():
                        future.cancel()
                        return
            finally:
                buffer.put(_DONE)

        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix='loader') as executor:
            producer = threading.Thread(target=produce, args=(executor,), daemon=True)
            producer.start()
            try:
                while True:
                    item = buffer.get()
                    if item is _DONE:
                        break
                    yield item.result()
            finally:
                stop.set()
                while producer.is_alive():
                    try:
                        buffer.get_nowait()
                    except queue.Empty:
                        pass
                    producer.join(timeout=0.05)

    def epoch_batches(self, epoch):
        logger.debug("Loader epoch %s: %s batches of %s", epoch, len(self), self.batch_size)
        return iter(self)


def train_loader(dataset, plan, rngs, dtype=np.float64):
    """Shuffled, augmented loader for a run's training split."""

    return BatchLoader(dataset, plan.batch_size, order_rng=rngs['data'], augment=plan.augment,
                       augment_rng=rngs['augment'], dtype=dtype, workers=plan.data.workers,
                       prefetch=plan.data.prefetch, deterministic=plan.deterministic)


def eval_loader(dataset, batch_size=256, dtype=np.float64):
    return BatchLoader(dataset, batch_size, dtype=dtype)
