import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import CPUINFO
from pkgtune.cpu import (
    BASELINE,
    LINEAGE,
    MARCH_NAMES,
    FeatureSet,
    detect_microarch,
    is_compatible,
    lanes_for,
    lookup_microarch,
    missing_features,
    parse_cpu_flags,
    read_host_features,
)
from pkgtune.errors import CpuParseError, UnknownMicroarchError, UnsupportedSystemError

EXPECTED = json.loads((CPUINFO / "expectations.json").read_text())
ALL_FLAGS = sorted(set().union(*(m.required for m in LINEAGE)) | {"sse", "mmx", "fpu", "lm"})


def test_lineage_is_cumulative_and_ranked():
    for prev, cur in zip(LINEAGE, LINEAGE[1:]):
        assert prev.required < cur.required
        assert cur.rank == prev.rank + 1
        assert cur.vector_bits >= prev.vector_bits
    assert BASELINE.required == {"sse2"}
    assert [m.lanes for m in LINEAGE] == [2, 2, 4, 4, 4, 8]


def test_detect_skylake_avx512_from_flag_line():
    flags = parse_cpu_flags(
        "sse2 sse3 ssse3 sse4_1 sse4_2 popcnt avx xsave pclmulqdq avx2 fma bmi1 bmi2 "
        "movbe f16c rdrand fsgsbase adx rdseed 3dnowprefetch clflushopt xsavec xsaves "
        "avx512f avx512cd"
    )
    assert detect_microarch(flags).name == "skylake-avx512"


def test_sse_only_host_is_baseline():
    assert detect_microarch(parse_cpu_flags("fpu sse sse2")) is BASELINE


def test_pni_counts_as_sse3():
    assert "sse3" in parse_cpu_flags("flags\t\t: fpu pni sse2\n")


def test_multi_processor_dump_uses_flags_line():
    text = "processor\t: 0\nflags\t\t: sse2 avx\n\nprocessor\t: 1\nflags\t\t: sse2 avx\n"
    assert parse_cpu_flags(text) == FeatureSet({"sse2", "avx"})


@pytest.mark.parametrize("text", ["", "processor : 0\nvendor_id : x\n"])
def test_unparseable_input_raises(text):
    with pytest.raises(CpuParseError):
        parse_cpu_flags(text)


@pytest.mark.parametrize("dump,expected", sorted(EXPECTED.items()))
def test_corpus_detection(dump, expected):
    assert detect_microarch(read_host_features(CPUINFO / dump)).name == expected


def test_corpus_spans_every_lineage_entry():
    assert set(EXPECTED.values()) == set(MARCH_NAMES)


def test_aarch64_host_is_unsupported():
    with pytest.raises(UnsupportedSystemError):
        read_host_features(CPUINFO / "aarch64-neoverse-n1.cpuinfo")
    with pytest.raises(UnsupportedSystemError):
        detect_microarch({"sse2"}, system="aarch64-linux")


def test_missing_cpuinfo_file(tmp_path):
    with pytest.raises(CpuParseError):
        read_host_features(tmp_path / "nope")


def test_unknown_march_lists_valid_names():
    with pytest.raises(UnknownMicroarchError) as info:
        lookup_microarch("pentium4")
    for name in MARCH_NAMES:
        assert name in str(info.value)


def test_compatibility():
    skl512 = lookup_microarch("skylake-avx512")
    host = lookup_microarch("skylake").required
    assert not is_compatible(skl512, host)
    assert missing_features(skl512, host) == {"avx512f", "avx512cd"}
    assert is_compatible(BASELINE, host)


def test_lanes_for():
    assert lanes_for(None) == 2
    assert lanes_for("haswell") == 4
    assert lanes_for("skylake-avx512") == 8


feature_sets = st.sets(st.sampled_from(ALL_FLAGS))


@settings(max_examples=200, deadline=None)
@given(feature_sets, feature_sets)
def test_detection_is_monotone(a, b):
    small, big = FeatureSet(a), FeatureSet(a | b)
    assert detect_microarch(small).rank <= detect_microarch(big).rank


@settings(max_examples=200, deadline=None)
@given(feature_sets)
def test_detected_march_is_compatible(flags):
    march = detect_microarch(flags)
    assert march is BASELINE or is_compatible(march, flags)
    for other in LINEAGE:
        if other.rank > march.rank:
            assert not is_compatible(other, flags)
