import numpy as np
import pytest

from ou_spectra.canonical import m_chain3, m_ellnn, m_kramers, m_ou1, m_self


@pytest.fixture(params=["ou1", "self", "kramers", "ellnn", "chain3"])
def canonical(request):
    return {"ou1": m_ou1, "self": m_self, "kramers": m_kramers, "ellnn": m_ellnn, "chain3": m_chain3}[request.param]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
