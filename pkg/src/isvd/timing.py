import time

STEPS = ("pre_svd", "svd", "post_svd")


class StepTimer:
    """Accumulates wall time of the three phases of an SVD update.

    Laps are contiguous, so the phase totals always add up to ``total``.
    """

    def __init__(self):
        self.totals = dict.fromkeys(STEPS, 0.0)
        self._last = None

    def start(self):
        self._last = time.perf_counter()

    def lap(self, step):
        now = time.perf_counter()
        self.totals[step] += now - self._last
        self._last = now

    @property
    def total(self):
        return sum(self.totals.values())


def start(timer):
    if timer is not None:
        timer.start()


def lap(timer, step):
    if timer is not None:
        timer.lap(step)
