import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchadapt.dsl import (
    FAIL,
    HOLE_TOKEN,
    INT,
    LIST_CATALOG,
    LIST_INT,
    App,
    ArityError,
    Hole,
    Input,
    SerializationError,
    TypeMismatchError,
    UnknownTokenError,
    deserialize_tokens,
    evaluate,
    n_holes,
    parse_program,
    print_program,
    program_length,
    serialize_tokens,
)

from helpers import SIGS, random_program

IL = (INT, LIST_INT)
LL = (LIST_INT, LIST_INT)


def run(text, sig, *inputs):
    return evaluate(parse_program(text, LIST_CATALOG, sig), inputs)


def test_catalog_shape():
    assert len(LIST_CATALOG.primitives) == 34
    assert LIST_CATALOG.n_productions == 37
    names = [p.name for p in LIST_CATALOG.productions]
    assert names[-3:] == ["input0", "input1", "input2"]
    assert len(set(names)) == len(names)


@pytest.mark.parametrize(
    "program,inputs,expected",
    [
        ("(MAXIMUM (MAP DIV3 (DROP input0 input1)))", (1, (-101, 63, 64, 79, 119, 91, -56, 47, -74, -33)), 39),
        ("(MAXIMUM (MAP DIV3 (DROP input0 input1)))", (4, (-6, -96, -45, 17, 26, -38, 17, -18, -112, -48)), 8),
        ("(TAKE input0 (MAP SQR (MAP DEC input1)))", (2, (-9, 5, -8, -9, 9, -3, 7, -5, -10, 1)), (100, 16)),
        ("(TAKE input0 (MAP SQR (MAP DEC input1)))", (3, (-5, -8, 0, 10, 2, -7, -3, -5, 6, 2)), (36, 81, 1)),
    ],
)
def test_worked_examples(program, inputs, expected):
    assert run(program, IL, *inputs) == expected


@pytest.mark.parametrize(
    "program,a,b,expected",
    [
        (
            "(ZIPWITH MIN input1 (ZIPWITH MIN (FILTER isEVEN (MAP INC input0)) input0))",
            (123, -105, 60, 122, 7, -54, 15, 2, 44, 7),
            (-50, 82, 88, -37, 111, 115, 108, -44, 96, 107),
            (-50, -105, 8, -37, 7),
        ),
        (
            "(ZIPWITH MIN input1 (ZIPWITH MIN (FILTER isEVEN (MAP INC input0)) input0))",
            (115, -75, -36, 98, -114, -91, 22, 28, -35, -7),
            (22, -123, -101, -17, 118, 86, 2, -106, 88, -75),
            (22, -123, -101, -34, -114),
        ),
        (
            "(ZIPWITH ADD (FILTER isPOS (MAP MUL4 input0)) (ZIPWITH MUL input1 input0))",
            (4, -7, -6, 2, -5, -7, 4, -4, 1, -5),
            (-4, 1, 7, -3, -2, -7, 1, 5, -2, 7),
            (0, 1, -26, -2),
        ),
        (
            "(ZIPWITH ADD (FILTER isPOS (MAP MUL4 input0)) (ZIPWITH MUL input1 input0))",
            (3, -6, -6, 4, 2, -7, -4, 2, -4, -1),
            (-5, -6, 4, -7, 0, 7, -7, -5, 4, 3),
            (-3, 52, -16, -20),
        ),
        (
            "(ZIPWITH ADD (MAP SQR (ZIPWITH MAX input1 input0)) (MAP SQR input0))",
            (-1, 5, -6, 1, -4, -7, -3, 6, 4, -1),
            (-6, -4, 3, 4, 3, -3, 0, 3, 5, -3),
            (2, 50, 45, 17, 25, 58, 9, 72, 41, 2),
        ),
        (
            "(ZIPWITH ADD (MAP SQR (ZIPWITH MAX input1 input0)) (MAP SQR input0))",
            (-4, 0, -4, 1, 2, -2, 7, 2, -2, -4),
            (-5, 6, -1, -7, -5, -6, -3, -4, 7, -5),
            (32, 36, 17, 2, 8, 8, 98, 8, 53, 32),
        ),
        (
            "(FILTER isODD (MAP DIV2 (ZIPWITH MIN input0 (MAP DIV3 input1))))",
            (69, -49, 117, 7, -13, 84, -48, -125, 6, -68),
            (112, -44, 77, -58, -126, -45, 112, 23, -92, 42),
            (-9, -21, -7, -15),
        ),
        (
            "(FILTER isODD (MAP DIV2 (ZIPWITH MIN input0 (MAP DIV3 input1))))",
            (0, -76, -85, 75, 62, -64, 95, -77, -78, -114),
            (-111, 92, -121, 108, 5, -22, -126, -40, 9, -115),
            (-21, -39, -57),
        ),
    ],
)
def test_sketch_completion_samples(program, a, b, expected):
    # the last pair only holds with division truncating toward zero
    assert run(program, LL, a, b) == expected


def test_division_truncates_toward_zero():
    assert run("(MAP DIV2 input0)", (LIST_INT,), (-3, 3, -1, 1)) == (-1, 1, 0, 0)
    assert run("(MAP DIV3 input0)", (LIST_INT,), (-7, 7)) == (-2, 2)
    assert run("(MAP DIV4 input0)", (LIST_INT,), (-5, 5)) == (-1, 1)


@pytest.mark.parametrize(
    "program,inputs,expected",
    [
        ("(HEAD input0)", ((),), FAIL),
        ("(LAST input0)", ((),), FAIL),
        ("(MINIMUM input0)", ((),), FAIL),
        ("(MAXIMUM input0)", ((),), FAIL),
        ("(SCANL1 ADD input0)", ((),), FAIL),
        ("(SUM input0)", ((),), 0),
        ("(SCANL1 ADD input0)", ((1, 2, 3),), (1, 3, 6)),
        ("(SCANL1 MAX input0)", ((1, 5, 3),), (1, 5, 5)),
        ("(COUNT isNEG input0)", ((-1, 0, -2),), 2),
        ("(SORT input0)", ((3, -1, 2),), (-1, 2, 3)),
        ("(REVERSE input0)", ((3, -1, 2),), (2, -1, 3)),
    ],
)
def test_list_semantics(program, inputs, expected):
    assert run(program, (LIST_INT,), *inputs) == expected


def test_index_semantics():
    assert run("(ACCESS input0 input1)", IL, 1, (5, 6, 7)) == 6
    assert run("(ACCESS input0 input1)", IL, 3, (5, 6, 7)) is FAIL
    assert run("(ACCESS input0 input1)", IL, -1, (5, 6, 7)) is FAIL
    assert run("(TAKE input0 input1)", IL, -2, (5, 6, 7)) == ()
    assert run("(DROP input0 input1)", IL, -2, (5, 6, 7)) == (5, 6, 7)
    assert run("(TAKE input0 input1)", IL, 9, (5, 6, 7)) == (5, 6, 7)


def test_overflow_is_fail_and_propagates():
    prog = parse_program("(HEAD (MAP SQR input0))", LIST_CATALOG, (LIST_INT,))
    assert evaluate(prog, ((2,),), bound=10) == 4
    assert evaluate(prog, ((4,),), bound=10) is FAIL


def test_evaluate_rejects_wrong_input_type():
    prog = parse_program("(HEAD input0)", LIST_CATALOG, (LIST_INT,))
    with pytest.raises(TypeMismatchError):
        evaluate(prog, (3,))


def test_parse_errors():
    with pytest.raises(UnknownTokenError):
        parse_program("(FOO input0)", LIST_CATALOG, (LIST_INT,))
    with pytest.raises(ArityError):
        parse_program("(MAP INC)", LIST_CATALOG, (LIST_INT,))
    assert parse_program("(MAP (INC) input0)", LIST_CATALOG, (LIST_INT,)) == parse_program(
        "(MAP INC input0)", LIST_CATALOG, (LIST_INT,)
    )
    with pytest.raises(TypeMismatchError):
        parse_program("(MAP isODD input0)", LIST_CATALOG, (LIST_INT,))
    with pytest.raises(UnknownTokenError):
        parse_program("(HEAD input1)", LIST_CATALOG, (LIST_INT,))
    with pytest.raises(TypeMismatchError) as exc:
        parse_program("(SUM (HEAD input0))", LIST_CATALOG, (LIST_INT,))
    assert exc.value.position == 3  # token index of HEAD


def test_app_checks_types():
    by = LIST_CATALOG.by_name
    with pytest.raises(TypeMismatchError):
        App(by["MAP"], (App(by["isODD"]), Input(0, LIST_INT)))
    with pytest.raises(ArityError):
        App(by["MAP"], (App(by["INC"]),))


def test_holes_in_text_and_tokens():
    sk = parse_program("(MAP <HOLE> (FILTER isODD <HOLE>))", LIST_CATALOG, (LIST_INT,))
    assert n_holes(sk) == 2
    toks = serialize_tokens(sk)
    assert toks == ["MAP", HOLE_TOKEN, "FILTER", "isODD", HOLE_TOKEN]
    assert deserialize_tokens(toks, LIST_INT, (LIST_INT,)) == sk
    assert parse_program(print_program(sk), LIST_CATALOG, (LIST_INT,)) == sk
    assert parse_program("<HOLE>", LIST_CATALOG, (), LIST_INT) == Hole(LIST_INT)


def test_deserialize_errors():
    with pytest.raises(SerializationError):
        deserialize_tokens(["MAP", "INC"], LIST_INT, (LIST_INT,))
    with pytest.raises(SerializationError):
        deserialize_tokens(["input0", "input0"], LIST_INT, (LIST_INT,))
    with pytest.raises(TypeMismatchError):
        deserialize_tokens(["SUM", "input0"], LIST_INT, (LIST_INT,))


def test_program_length_counts_data_applications():
    prog = parse_program("(TAKE input0 (MAP SQR (MAP DEC input1)))", LIST_CATALOG, IL)
    assert program_length(prog) == 3
    assert program_length(parse_program("input0", LIST_CATALOG, (LIST_INT,))) == 0


@given(st.integers(0, 2**32 - 1), st.sampled_from(SIGS), st.sampled_from([INT, LIST_INT]))
def test_text_and_token_round_trip(seed, sig, ty):
    prog = random_program(np.random.default_rng(seed), ty, 4, sig)
    if prog is None:
        return
    assert parse_program(print_program(prog), LIST_CATALOG, sig) == prog
    assert deserialize_tokens(serialize_tokens(prog), prog.ty, sig) == prog
