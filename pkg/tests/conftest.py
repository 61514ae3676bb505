import pytest

from alphalab import geometry as geo


@pytest.fixture(scope="session")
def s1():
    return geo.build_sphere(1, 64)


@pytest.fixture(scope="session")
def s2():
    return geo.build_sphere(2, 24)


@pytest.fixture(scope="session")
def s2_fine():
    return geo.build_sphere(2, 48)


@pytest.fixture(scope="session")
def s3():
    return geo.build_sphere(3, 12)


@pytest.fixture(scope="session")
def t1():
    return geo.build_torus(1, 64)


@pytest.fixture(scope="session")
def t2():
    return geo.build_torus(2, 16)


@pytest.fixture(scope="session")
def t3():
    return geo.build_torus(3, 10)


@pytest.fixture(scope="session")
def t2_warp():
    return geo.build_torus(2, 16, "warp1", {"eps": 0.1})


@pytest.fixture(scope="session")
def t3_warp():
    return geo.build_torus(3, 10, "warp1", {"eps": 0.1})
