"""Tests for the rewrite module: peephole rules, prompting, sanitization,
the three backends, reintegration, and the whole-program driver."""

import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from liftir.errors import ConfigError, IntegrationError, ReplayMissError
from liftir.ir import Const, IrType, NoOp, Put, RdTmp, Store, WrTmp, validate
from liftir.rewrite import (
    BackendConfig,
    Llm,
    Replay,
    RewriteCandidate,
    RewriteProposal,
    Rule,
    Status,
    backend_request,
    build_prompt,
    check_backend_config,
    optimize_program,
    parse_replay_file,
    reintegrate,
    rule_rewrite,
    sanitize,
    write_replay_file,
)
from liftir.text import parse_program, parse_statement_body, print_irsb, print_stmt_body
from liftir.verify import VerdictKind, VerifyPolicy, verify_rewrite

BASE_ADDR = 0x401000


def make_block(
    lines,
    temps="t0:Ity_I64 t1:Ity_I64",
    next_body="PUT(offset=184) = 0x0000000000401040; Ijk_Boring",
):
    """Assemble a one-block program from statement bodies. An IMark header
    is added, so lines[i] lands at statement index i + 1."""
    all_lines = ["------ IMark(0x401000,4,0) ------", *lines]
    body = "\n".join(f"  {i:02d} | {ln}" for i, ln in enumerate(all_lines))
    text = (
        f"IRSB @ 0x{BASE_ADDR:x} {{\n"
        f"  {temps}\n"
        f"{body}\n"
        f"  NEXT: {next_body}\n"
        "}\n"
    )
    return parse_program(text).blocks[BASE_ADDR]


def cand(block, index):
    return RewriteCandidate(block.addr, index, block.stmts[index], block)


def rule_hit(block, index):
    proposal = rule_rewrite(cand(block, index))
    assert proposal is not None, "expected a rule to match"
    assert proposal.status is Status.SANITIZED
    assert isinstance(proposal.provenance, Rule)
    return proposal


class TestRuleR1:
    @pytest.mark.parametrize(
        "expr,expect",
        [
            ("Add64(t0,0x0000000000000000)", "t1 = t0"),
            ("Add64(0x0000000000000000,t0)", "t1 = t0"),
            ("Sub64(t0,0x0000000000000000)", "t1 = t0"),
            ("Or64(t0,0x0000000000000000)", "t1 = t0"),
            ("Xor64(0x0000000000000000,t0)", "t1 = t0"),
            ("Shl64(t0,0x00)", "t1 = t0"),
            ("Shr64(t0,0x00)", "t1 = t0"),
            ("Sar64(t0,0x00)", "t1 = t0"),
            ("Mul64(t0,0x0000000000000001)", "t1 = t0"),
            ("Mul64(0x0000000000000001,t0)", "t1 = t0"),
            ("And64(t0,0xffffffffffffffff)", "t1 = t0"),
            ("And64(0xffffffffffffffff,t0)", "t1 = t0"),
        ],
    )
    def test_identity_elements(self, expr, expect):
        block = make_block(
            ["t0 = GET:I64(offset=16)", f"t1 = {expr}", "PUT(offset=24) = t1"]
        )
        proposal = rule_hit(block, 2)
        assert proposal.provenance == Rule("R1")
        assert print_stmt_body(proposal.replacement) == expect

    def test_identity_respects_width(self):
        # 0xff is all-ones at I8 but not at wider types
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = 64to8(t0)",
                "t2 = And8(t1,0xff)",
                "PUT(offset=24) = t2",
            ],
            temps="t0:Ity_I64 t1:Ity_I8 t2:Ity_I8",
        )
        proposal = rule_hit(block, 3)
        assert proposal.provenance == Rule("R1")
        assert print_stmt_body(proposal.replacement) == "t2 = t1"

    def test_sub_zero_on_left_is_not_identity(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Sub64(0x0000000000000000,t0)",
                "PUT(offset=24) = t1",
            ]
        )
        proposal = rule_rewrite(cand(block, 2))
        assert proposal is None or proposal.provenance != Rule("R1")

    def test_applies_inside_put_and_store(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "PUT(offset=24) = Add64(t0,0x0000000000000000)",
                "STOREle(t0) = Mul64(t0,0x0000000000000001)",
            ]
        )
        p_put = rule_hit(block, 2)
        assert p_put.replacement == Put(24, RdTmp(0))
        p_store = rule_hit(block, 3)
        assert p_store.replacement == Store(RdTmp(0), RdTmp(0))


class TestRuleR2:
    @pytest.mark.parametrize(
        "expr,expect",
        [
            ("Add64(0x0000000000000002,0x0000000000000003)", "t1 = 0x0000000000000005"),
            ("Sub64(0x0000000000000002,0x0000000000000003)", "t1 = 0xffffffffffffffff"),
            ("Mul64(0xffffffffffffffff,0x0000000000000002)", "t1 = 0xfffffffffffffffe"),
            ("Shl64(0x0000000000000001,0x40)", "t1 = 0x0000000000000000"),
            ("Sar64(0x8000000000000000,0x3f)", "t1 = 0xffffffffffffffff"),
            ("DivS64(0xfffffffffffffff9,0x0000000000000002)", "t1 = 0xfffffffffffffffd"),
            ("Not64(0x0000000000000001)", "t1 = 0xfffffffffffffffe"),
        ],
    )
    def test_constant_folds(self, expr, expect):
        block = make_block(
            ["t0 = GET:I64(offset=16)", f"t1 = {expr}", "PUT(offset=24) = t1"]
        )
        proposal = rule_hit(block, 2)
        assert proposal.provenance == Rule("R2")
        assert print_stmt_body(proposal.replacement) == expect

    def test_fold_narrows_to_result_type(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = CmpEQ64(0x0000000000000007,0x0000000000000007)",
                "PUT(offset=24) = 1Uto64(t1)",
            ],
            temps="t0:Ity_I64 t1:Ity_I1",
        )
        proposal = rule_hit(block, 2)
        assert proposal.replacement == WrTmp(1, Const(1, IrType.I1))

    def test_sign_extension_folds(self):
        block = make_block(
            ["t0 = GET:I64(offset=16)", "t1 = 32Sto64(0x80000000)", "PUT(offset=24) = t1"]
        )
        proposal = rule_hit(block, 2)
        assert print_stmt_body(proposal.replacement) == "t1 = 0xffffffff80000000"

    def test_division_by_zero_is_left_alone(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = DivU64(0x0000000000000005,0x0000000000000000)",
                "PUT(offset=24) = t1",
            ]
        )
        assert rule_rewrite(cand(block, 2)) is None


class TestRuleR3:
    @pytest.mark.parametrize(
        "expr,expect",
        [
            ("Xor64(t0,t0)", "t1 = 0x0000000000000000"),
            ("Sub64(t0,t0)", "t1 = 0x0000000000000000"),
            ("And64(t0,t0)", "t1 = t0"),
            ("Or64(t0,t0)", "t1 = t0"),
        ],
    )
    def test_self_cancel(self, expr, expect):
        block = make_block(
            ["t0 = GET:I64(offset=16)", f"t1 = {expr}", "PUT(offset=24) = t1"]
        )
        proposal = rule_hit(block, 2)
        assert proposal.provenance == Rule("R3")
        assert print_stmt_body(proposal.replacement) == expect

    def test_syntactically_different_operands_do_not_match(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=16)",
                "t2 = Xor64(t0,t1)",
                "PUT(offset=24) = t2",
            ],
            temps="t0:Ity_I64 t1:Ity_I64 t2:Ity_I64",
        )
        assert rule_rewrite(cand(block, 3)) is None

    def test_faultable_operand_blocks_the_rule(self):
        # dropping x - x would also drop a potential helper-call fault
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Sub64(x86g_calculate_condition(t0),x86g_calculate_condition(t0))",
                "PUT(offset=24) = t1",
            ]
        )
        assert rule_rewrite(cand(block, 2)) is None


class TestRuleR4:
    def test_double_complement(self):
        block = make_block(
            ["t0 = GET:I64(offset=16)", "t1 = Not64(Not64(t0))", "PUT(offset=24) = t1"]
        )
        proposal = rule_hit(block, 2)
        assert proposal.provenance == Rule("R4")
        assert print_stmt_body(proposal.replacement) == "t1 = t0"

    def test_single_complement_does_not_match(self):
        block = make_block(
            ["t0 = GET:I64(offset=16)", "t1 = Not64(t0)", "PUT(offset=24) = t1"]
        )
        assert rule_rewrite(cand(block, 2)) is None


class TestRuleR5:
    def two_stores(self, second_data="t2"):
        return make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=24)",
                "t2 = GET:I64(offset=32)",
                "STOREle(t0) = t1",
                f"STOREle(t0) = {second_data}",
            ],
            temps="t0:Ity_I64 t1:Ity_I64 t2:Ity_I64",
        )

    def test_earlier_store_becomes_noop(self):
        block = self.two_stores()
        proposal = rule_hit(block, 4)
        assert proposal.provenance == Rule("R5")
        assert proposal.replacement == NoOp()

    def test_surviving_store_is_untouched(self):
        block = self.two_stores()
        assert rule_rewrite(cand(block, 5)) is None

    def test_noop_and_imark_between_stores_are_skipped(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=24)",
                "STOREle(t0) = t1",
                "NoOp",
                "------ IMark(0x401002,2,0) ------",
                "STOREle(t0) = t0",
            ],
            temps="t0:Ity_I64 t1:Ity_I64",
        )
        proposal = rule_hit(block, 3)
        assert proposal.provenance == Rule("R5")

    def test_different_address_expression_blocks_the_merge(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=24)",
                "STOREle(t0) = t1",
                "STOREle(t1) = t0",
            ],
            temps="t0:Ity_I64 t1:Ity_I64",
        )
        assert rule_rewrite(cand(block, 3)) is None

    def test_survivor_loading_memory_blocks_the_merge(self):
        # the second store could read back the bytes the first one wrote
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=24)",
                "STOREle(t0) = t1",
                "STOREle(t0) = LDle:I64(t0)",
            ],
            temps="t0:Ity_I64 t1:Ity_I64",
        )
        assert rule_rewrite(cand(block, 3)) is None

    def test_narrower_survivor_blocks_the_merge(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=24)",
                "t2 = 64to8(t1)",
                "STOREle(t0) = t1",
                "STOREle(t0) = t2",
            ],
            temps="t0:Ity_I64 t1:Ity_I64 t2:Ity_I8",
        )
        assert rule_rewrite(cand(block, 4)) is None

    def test_wider_survivor_merges_a_narrow_store(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=24)",
                "t2 = 64to8(t1)",
                "STOREle(t0) = t2",
                "STOREle(t0) = t1",
            ],
            temps="t0:Ity_I64 t1:Ity_I64 t2:Ity_I8",
        )
        proposal = rule_hit(block, 4)
        assert proposal.provenance == Rule("R5")


class TestRuleR6:
    def test_covered_put_becomes_noop(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "PUT(offset=64) = t0",
                "t1 = Add64(t0,0x0000000000000001)",
                "PUT(offset=64) = t1",
            ]
        )
        proposal = rule_hit(block, 2)
        assert proposal.provenance == Rule("R6")
        assert proposal.replacement == NoOp()

    def test_final_put_is_untouched(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "PUT(offset=64) = t0",
                "t1 = Add64(t0,0x0000000000000001)",
                "PUT(offset=64) = t1",
            ]
        )
        assert rule_rewrite(cand(block, 4)) is None

    def test_intervening_exit_blocks_the_rule(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = CmpLT64U(t0,0x0000000000000010)",
                "PUT(offset=64) = t0",
                "if (t1) { PUT(offset=184) = 0x401020; Ijk_Boring }",
                "PUT(offset=64) = t0",
            ],
            temps="t0:Ity_I64 t1:Ity_I1",
        )
        assert rule_rewrite(cand(block, 3)) is None

    def test_intervening_read_of_the_offset_blocks_the_rule(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "PUT(offset=64) = t0",
                "t1 = GET:I64(offset=64)",
                "PUT(offset=64) = t1",
            ]
        )
        assert rule_rewrite(cand(block, 2)) is None

    def test_partially_overlapping_read_blocks_the_rule(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "PUT(offset=64) = t0",
                "t1 = GET:I64(offset=68)",
                "PUT(offset=64) = Add64(t0,t1)",
            ]
        )
        assert rule_rewrite(cand(block, 2)) is None

    def test_narrower_later_put_does_not_cover(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = 64to8(t0)",
                "PUT(offset=64) = t0",
                "PUT(offset=64) = t1",
            ],
            temps="t0:Ity_I64 t1:Ity_I8",
        )
        assert rule_rewrite(cand(block, 3)) is None


class TestRuleR7:
    def test_dead_wrtmp_becomes_noop(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Mul64(t0,0x0000000000000003)",
                "PUT(offset=24) = t0",
            ]
        )
        proposal = rule_hit(block, 2)
        assert proposal.provenance == Rule("R7")
        assert proposal.replacement == NoOp()

    def test_read_by_next_expression_keeps_the_statement(self):
        block = make_block(
            ["t0 = GET:I64(offset=16)", "t1 = Mul64(t0,0x0000000000000003)"],
            next_body="PUT(offset=184) = t1; Ijk_Boring",
        )
        assert rule_rewrite(cand(block, 2)) is None

    def test_read_by_exit_guard_keeps_the_statement(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = CmpLT64U(t0,0x0000000000000010)",
                "if (t1) { PUT(offset=184) = 0x401020; Ijk_Boring }",
                "PUT(offset=24) = t0",
            ],
            temps="t0:Ity_I64 t1:Ity_I1",
        )
        assert rule_rewrite(cand(block, 2)) is None

    def test_faultable_rhs_keeps_the_statement(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = DivU64(t0,t0)",
                "PUT(offset=24) = t0",
            ]
        )
        assert rule_rewrite(cand(block, 2)) is None

    def test_simplification_wins_over_dead_code(self):
        # rules apply in order: R1 fires even though t1 is also dead
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Add64(t0,0x0000000000000000)",
                "PUT(offset=24) = t0",
            ]
        )
        proposal = rule_hit(block, 2)
        assert proposal.provenance == Rule("R1")

    def test_no_rule_returns_none(self):
        block = make_block(
            ["t0 = GET:I64(offset=16)", "t1 = Add64(t0,t0)", "PUT(offset=24) = t1"]
        )
        assert rule_rewrite(cand(block, 2)) is None


class TestRuleSoundness:
    """Each rule's rewrite must be differentially equivalent on its block."""

    def check(self, block, index, memory_image=False):
        proposal = rule_hit(block, index)
        rewritten = reintegrate(block, [(index, proposal)])
        policy = VerifyPolicy(trials=64, seed=0, memory_image=memory_image)
        verdict = verify_rewrite(block, rewritten, policy)
        assert verdict.kind is VerdictKind.EQUIVALENT, verdict

    def test_r1(self):
        self.check(
            make_block(
                ["t0 = GET:I64(offset=16)", "t1 = Add64(t0,0x0000000000000000)", "PUT(offset=24) = t1"]
            ),
            2,
        )

    def test_r2(self):
        self.check(
            make_block(
                ["t0 = GET:I64(offset=16)", "t1 = Mul64(0x0000000000000007,0x0000000000000009)", "PUT(offset=24) = t1"]
            ),
            2,
        )

    def test_r3(self):
        self.check(
            make_block(
                ["t0 = GET:I64(offset=16)", "t1 = Xor64(t0,t0)", "PUT(offset=24) = t1"]
            ),
            2,
        )

    def test_r4(self):
        self.check(
            make_block(
                ["t0 = GET:I64(offset=16)", "t1 = Not64(Not64(t0))", "PUT(offset=24) = t1"]
            ),
            2,
        )

    def test_r5(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = GET:I64(offset=24)",
                "t2 = GET:I64(offset=32)",
                "STOREle(t0) = t1",
                "STOREle(t0) = t2",
            ],
            temps="t0:Ity_I64 t1:Ity_I64 t2:Ity_I64",
        )
        self.check(block, 4, memory_image=True)

    def test_r6(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "PUT(offset=64) = t0",
                "t1 = Add64(t0,0x0000000000000001)",
                "PUT(offset=64) = t1",
            ]
        )
        self.check(block, 2)

    def test_r7(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Mul64(t0,0x0000000000000003)",
                "PUT(offset=24) = t0",
            ]
        )
        self.check(block, 2)


class TestBuildPrompt:
    def block(self):
        return make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Add64(t0,0x0000000000000000)",
                "PUT(offset=24) = t1",
            ]
        )

    def test_embeds_target_statement_verbatim(self):
        block = self.block()
        prompt = build_prompt(cand(block, 2))
        assert "t1 = Add64(t0,0x0000000000000000)" in prompt

    def test_contains_every_printed_block_line(self):
        block = self.block()
        prompt = build_prompt(cand(block, 2))
        for line in print_irsb(block).splitlines():
            assert line in prompt

    def test_deterministic(self):
        block = self.block()
        assert build_prompt(cand(block, 2)) == build_prompt(cand(block, 2))

    def test_names_the_statement_index(self):
        block = self.block()
        assert "02" in build_prompt(cand(block, 2))


class TestSanitize:
    def setup_method(self):
        self.block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = t0",
                "t2 = Add64(t1,0x0000000000000000)",
                "t3 = Mul64(t2,0x0000000000000002)",
                "PUT(offset=24) = t3",
                "STOREle(t0) = t3",
            ],
            temps="t0:Ity_I64 t1:Ity_I64 t2:Ity_I64 t3:Ity_I64",
        )

    def test_strips_code_fences(self):
        proposal = sanitize("```\nt1 = t0\n```", cand(self.block, 2))
        assert proposal.status is Status.SANITIZED
        assert proposal.replacement == WrTmp(1, RdTmp(0))

    def test_commentary_lines_are_skipped(self):
        raw = "Sure! The optimized statement is:\nt1 = t0"
        proposal = sanitize(raw, cand(self.block, 2))
        assert proposal.status is Status.SANITIZED
        assert proposal.replacement == WrTmp(1, RdTmp(0))

    def test_last_parsing_line_wins(self):
        raw = "t1 = Add64(t0,t0)\nActually, simpler:\nt1 = t0\n"
        proposal = sanitize(raw, cand(self.block, 2))
        assert proposal.replacement == WrTmp(1, RdTmp(0))

    def test_noop_literal_is_accepted(self):
        proposal = sanitize("NoOp", cand(self.block, 5))
        assert proposal.status is Status.SANITIZED
        assert proposal.replacement == NoOp()

    def test_empty_response_rejected(self):
        proposal = sanitize("\n\n```\n```\n", cand(self.block, 2))
        assert proposal.status is Status.REJECTED_SYNTAX
        assert "empty" in proposal.reason

    def test_unparseable_response_rejected(self):
        proposal = sanitize("I cannot help with that.", cand(self.block, 2))
        assert proposal.status is Status.REJECTED_SYNTAX
        assert proposal.replacement is None

    def test_changed_target_temp_rejected(self):
        proposal = sanitize("t9 = t0", cand(self.block, 2))
        assert proposal.status is Status.REJECTED_CONTRACT
        assert "target temp" in proposal.reason

    def test_changed_put_offset_rejected(self):
        proposal = sanitize("PUT(offset=32) = t3", cand(self.block, 5))
        assert proposal.status is Status.REJECTED_CONTRACT

    def test_store_must_stay_a_store(self):
        proposal = sanitize("t3 = t2", cand(self.block, 6))
        assert proposal.status is Status.REJECTED_CONTRACT
        store = sanitize("STOREle(t0) = t2", cand(self.block, 6))
        assert store.status is Status.SANITIZED

    def test_wrtmp_may_become_noop(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Mul64(t0,0x0000000000000003)",
                "PUT(offset=24) = t0",
            ]
        )
        proposal = sanitize("NoOp", cand(block, 2))
        assert proposal.status is Status.SANITIZED

    def test_noop_that_breaks_ssa_is_rejected(self):
        # t2 feeds statement 4; erasing its definition must not pass
        proposal = sanitize("NoOp", cand(self.block, 3))
        assert proposal.status is Status.REJECTED_CONTRACT

    def test_undeclared_temp_rejected(self):
        proposal = sanitize("t1 = t77", cand(self.block, 2))
        assert proposal.status is Status.REJECTED_CONTRACT

    def test_type_mismatch_rejected(self):
        proposal = sanitize("t1 = 64to8(t0)", cand(self.block, 2))
        assert proposal.status is Status.REJECTED_CONTRACT

    def test_reading_a_later_temp_rejected(self):
        proposal = sanitize("t1 = t3", cand(self.block, 2))
        assert proposal.status is Status.REJECTED_CONTRACT

    def test_exit_only_accepts_the_identical_exit(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = CmpLT64U(t0,0x0000000000000010)",
                "if (t1) { PUT(offset=184) = 0x401020; Ijk_Boring }",
                "PUT(offset=24) = t0",
            ],
            temps="t0:Ity_I64 t1:Ity_I1",
        )
        same = sanitize(
            "if (t1) { PUT(offset=184) = 0x401020; Ijk_Boring }", cand(block, 3)
        )
        assert same.status is Status.SANITIZED
        dropped = sanitize("NoOp", cand(block, 3))
        assert dropped.status is Status.REJECTED_CONTRACT
        retarget = sanitize(
            "if (t1) { PUT(offset=184) = 0x401024; Ijk_Boring }", cand(block, 3)
        )
        assert retarget.status is Status.REJECTED_CONTRACT

    def test_sanitize_is_idempotent_on_its_own_output(self):
        proposal = sanitize("```\nt2 = t1\n```", cand(self.block, 3))
        assert proposal.status is Status.SANITIZED
        again = sanitize(print_stmt_body(proposal.replacement), cand(self.block, 3))
        assert again.replacement == proposal.replacement

    def test_default_provenance_is_llm_raw_text(self):
        proposal = sanitize("t1 = t0", cand(self.block, 2))
        assert proposal.provenance == Llm("t1 = t0")


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except ValueError:
            body = None
        self.server.requests.append(
            {"path": self.path, "headers": dict(self.headers), "body": body}
        )
        status, payload = self.server.canned
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def llm_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.requests = []
    server.canned = (200, b"{}")
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()


def chat_response(text):
    return json.dumps({"choices": [{"message": {"content": text}}]}).encode("utf-8")


class TestLlmBackend:
    def block(self):
        return make_block(
            ["t0 = GET:I64(offset=16)", "t1 = Add64(t0,0x0000000000000000)", "PUT(offset=24) = t1"]
        )

    def config(self, server):
        host, port = server.server_address
        return BackendConfig(
            kind="llm",
            endpoint=f"http://{host}:{port}/v1/chat/completions",
            model_name="ir-opt-test",
        )

    def test_wire_contract(self, llm_server, monkeypatch):
        monkeypatch.setenv("LIFT_API_KEY", "sk-local-test")
        llm_server.canned = (200, chat_response("t1 = t0"))
        block = self.block()
        candidate = cand(block, 2)
        proposal = backend_request(candidate, self.config(llm_server))

        assert proposal.status is Status.SANITIZED
        assert proposal.replacement == WrTmp(1, RdTmp(0))
        assert proposal.provenance == Llm("t1 = t0")

        assert len(llm_server.requests) == 1
        req = llm_server.requests[0]
        assert req["path"] == "/v1/chat/completions"
        assert req["headers"]["Authorization"] == "Bearer sk-local-test"
        body = req["body"]
        assert body["model"] == "ir-opt-test"
        assert body["temperature"] == 0
        roles = [m["role"] for m in body["messages"]]
        assert roles == ["system", "user"]
        assert body["messages"][1]["content"] == build_prompt(candidate)
        assert "t1 = Add64(t0,0x0000000000000000)" in body["messages"][1]["content"]

    def test_custom_key_env(self, llm_server, monkeypatch):
        monkeypatch.delenv("LIFT_API_KEY", raising=False)
        monkeypatch.setenv("OTHER_KEY", "sk-other")
        llm_server.canned = (200, chat_response("t1 = t0"))
        cfg = BackendConfig(
            kind="llm",
            endpoint=f"http://127.0.0.1:{llm_server.server_address[1]}/v1/chat/completions",
            model_name="ir-opt-test",
            api_key_env="OTHER_KEY",
        )
        backend_request(cand(self.block(), 2), cfg)
        assert llm_server.requests[0]["headers"]["Authorization"] == "Bearer sk-other"

    def test_http_error_becomes_rejection(self, llm_server, monkeypatch):
        monkeypatch.setenv("LIFT_API_KEY", "k")
        llm_server.canned = (500, b'{"error": "boom"}')
        proposal = backend_request(cand(self.block(), 2), self.config(llm_server))
        assert proposal.status is Status.REJECTED_SYNTAX
        assert proposal.reason.startswith("backend-error:")

    def test_malformed_json_becomes_rejection(self, llm_server, monkeypatch):
        monkeypatch.setenv("LIFT_API_KEY", "k")
        llm_server.canned = (200, b"this is not json")
        proposal = backend_request(cand(self.block(), 2), self.config(llm_server))
        assert proposal.status is Status.REJECTED_SYNTAX
        assert proposal.reason.startswith("backend-error:")

    def test_missing_choices_becomes_rejection(self, llm_server, monkeypatch):
        monkeypatch.setenv("LIFT_API_KEY", "k")
        llm_server.canned = (200, b'{"choices": []}')
        proposal = backend_request(cand(self.block(), 2), self.config(llm_server))
        assert proposal.status is Status.REJECTED_SYNTAX
        assert proposal.reason.startswith("backend-error:")

    def test_unreachable_endpoint_becomes_rejection(self, monkeypatch):
        monkeypatch.setenv("LIFT_API_KEY", "k")
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        sock.close()
        cfg = BackendConfig(
            kind="llm",
            endpoint=f"http://127.0.0.1:{port}/v1/chat/completions",
            model_name="ir-opt-test",
            timeout=2.0,
        )
        proposal = backend_request(cand(self.block(), 2), cfg)
        assert proposal.status is Status.REJECTED_SYNTAX
        assert proposal.reason.startswith("backend-error:")

    def test_rejected_content_keeps_contract_status(self, llm_server, monkeypatch):
        monkeypatch.setenv("LIFT_API_KEY", "k")
        llm_server.canned = (200, chat_response("t9 = t0"))
        proposal = backend_request(cand(self.block(), 2), self.config(llm_server))
        assert proposal.status is Status.REJECTED_CONTRACT


class TestBackendConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            check_backend_config(BackendConfig(kind="oracle"))

    def test_llm_requires_endpoint_and_model(self):
        with pytest.raises(ConfigError):
            check_backend_config(BackendConfig(kind="llm", model_name="m"))
        with pytest.raises(ConfigError):
            check_backend_config(BackendConfig(kind="llm", endpoint="http://x"))

    def test_llm_requires_api_key_in_environment(self, monkeypatch):
        monkeypatch.delenv("LIFT_API_KEY", raising=False)
        cfg = BackendConfig(kind="llm", endpoint="http://x", model_name="m")
        with pytest.raises(ConfigError, match="LIFT_API_KEY"):
            check_backend_config(cfg)

    def test_replay_requires_path(self):
        with pytest.raises(ConfigError):
            check_backend_config(BackendConfig(kind="replay"))

    def test_rule_kind_needs_nothing(self):
        check_backend_config(BackendConfig(kind="rule"))


class TestReplayBackend:
    def block(self):
        return make_block(
            ["t0 = GET:I64(offset=16)", "t1 = Add64(t0,0x0000000000000000)", "PUT(offset=24) = t1"]
        )

    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "replay.tsv")
        records = [
            (0x401000, 2, "t1 = t0"),
            (0x402000, 7, "```\nNoOp\n```\n"),
            (0x403000, 1, "line one\nline two\twith a tab"),
        ]
        write_replay_file(path, records)
        parsed = parse_replay_file(path)
        assert len(parsed) == 3
        for addr, idx, raw in records:
            got_raw, line_no = parsed[(addr, idx)]
            assert got_raw == raw
            assert line_no >= 1

    def test_lookup_and_provenance(self, tmp_path):
        path = str(tmp_path / "replay.tsv")
        write_replay_file(path, [(0x401000, 2, "t1 = t0")])
        cfg = BackendConfig(kind="replay", replay_path=path)
        proposal = backend_request(cand(self.block(), 2), cfg)
        assert proposal.status is Status.SANITIZED
        assert proposal.replacement == WrTmp(1, RdTmp(0))
        assert proposal.provenance == Replay(path, 1)

    def test_miss_raises(self, tmp_path):
        path = str(tmp_path / "replay.tsv")
        write_replay_file(path, [(0x999000, 2, "t1 = t0")])
        cfg = BackendConfig(kind="replay", replay_path=path)
        with pytest.raises(ReplayMissError):
            backend_request(cand(self.block(), 2), cfg)

    def test_comments_and_blanks_are_skipped(self, tmp_path):
        path = tmp_path / "replay.tsv"
        import base64

        payload = base64.b64encode(b"t1 = t0").decode("ascii")
        path.write_text(f"# recorded run\n\n0x401000\t2\t{payload}\n")
        parsed = parse_replay_file(str(path))
        assert parsed[(0x401000, 2)][0] == "t1 = t0"

    def test_wrong_field_count_raises(self, tmp_path):
        path = tmp_path / "replay.tsv"
        path.write_text("0x401000\t2\n")
        with pytest.raises(ConfigError, match="3 tab-separated"):
            parse_replay_file(str(path))

    def test_bad_base64_raises(self, tmp_path):
        path = tmp_path / "replay.tsv"
        path.write_text("0x401000\t2\t@@@not-base64@@@\n")
        with pytest.raises(ConfigError):
            parse_replay_file(str(path))

    def test_missing_file_raises_config_error(self):
        with pytest.raises(ConfigError):
            parse_replay_file("/nonexistent/replay.tsv")


class TestReintegrate:
    def block(self):
        return make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Mul64(t0,0x0000000000000003)",
                "PUT(offset=24) = t0",
            ]
        )

    def ok(self, stmt):
        return RewriteProposal(stmt, Rule("T"), Status.SANITIZED)

    def test_replaces_in_place(self):
        block = self.block()
        out = reintegrate(block, [(2, self.ok(NoOp()))])
        assert len(out.stmts) == len(block.stmts)
        assert out.stmts[2] == NoOp()
        assert out.stmts[1] == block.stmts[1]
        assert out.stmts[3] == block.stmts[3]

    def test_empty_proposal_list_is_identity(self):
        block = self.block()
        assert reintegrate(block, []) == block

    def test_prunes_orphaned_temp_declarations(self):
        block = self.block()
        out = reintegrate(block, [(2, self.ok(NoOp()))])
        assert 1 not in out.temps
        assert 0 in out.temps

    def test_keeps_exits_next_and_jumpkind(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = CmpLT64U(t0,0x0000000000000010)",
                "if (t1) { PUT(offset=184) = 0x401020; Ijk_Boring }",
                "t2 = Add64(t0,0x0000000000000000)",
                "PUT(offset=24) = t2",
            ],
            temps="t0:Ity_I64 t1:Ity_I1 t2:Ity_I64",
        )
        out = reintegrate(block, [(4, self.ok(WrTmp(2, RdTmp(0))))])
        assert out.stmts[3] == block.stmts[3]
        assert out.next == block.next
        assert out.next_jumpkind == block.next_jumpkind

    def test_result_validates(self):
        out = reintegrate(self.block(), [(2, self.ok(NoOp()))])
        assert validate(out) == []

    def test_duplicate_indices_raise(self):
        with pytest.raises(IntegrationError, match="duplicate"):
            reintegrate(self.block(), [(2, self.ok(NoOp())), (2, self.ok(NoOp()))])

    def test_unsanitized_proposal_raises(self):
        bad = RewriteProposal(None, Rule("T"), Status.REJECTED_SYNTAX, "nope")
        with pytest.raises(IntegrationError, match="not sanitized"):
            reintegrate(self.block(), [(2, bad)])

    def test_out_of_range_index_raises(self):
        with pytest.raises(IntegrationError, match="out of range"):
            reintegrate(self.block(), [(99, self.ok(NoOp()))])

    def test_read_before_write_raises_and_block_is_unchanged(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Mul64(t0,0x0000000000000003)",
                "t2 = Add64(t1,t1)",
                "PUT(offset=24) = t2",
            ],
            temps="t0:Ity_I64 t1:Ity_I64 t2:Ity_I64",
        )
        snapshot = block
        # replacement at index 1 reads t2, which is defined at index 3
        bad = self.ok(WrTmp(0, RdTmp(2)))
        with pytest.raises(IntegrationError, match="validation"):
            reintegrate(block, [(1, bad)])
        assert block == snapshot


def program_of(block):
    return parse_program(print_irsb(block))


class TestOptimizeProgram:
    def simple_program(self):
        block = make_block(
            [
                "t0 = GET:I64(offset=16)",
                "t1 = Add64(t0,0x0000000000000000)",
                "PUT(offset=24) = t1",
            ]
        )
        return program_of(block)

    def test_k_zero_is_identity(self):
        prog = self.simple_program()
        out, log = optimize_program(prog, 0)
        assert out.blocks == prog.blocks
        assert log.entries == []
        assert log.final_checks == []

    def test_rule_backend_retains_verified_rewrite(self):
        prog = self.simple_program()
        out, log = optimize_program(prog, 10)
        block = out.blocks[BASE_ADDR]
        assert print_stmt_body(block.stmts[2]) == "t1 = t0"
        entry = next(e for e in log.entries if e.stmt_index == 2)
        assert entry.retained
        assert entry.verdict.kind is VerdictKind.EQUIVALENT
        assert entry.proposal.provenance == Rule("R1")

    def test_every_ranked_candidate_is_logged_once(self):
        prog = self.simple_program()
        _, log = optimize_program(prog, 10)
        keys = [(e.block_addr, e.stmt_index) for e in log.entries]
        assert len(keys) == len(set(keys))
        # IMark at 0 is never a candidate
        assert all(idx != 0 for _, idx in keys)
        assert log.retained_count == sum(1 for e in log.entries if e.retained)

    def test_replay_wrong_rewrite_is_discarded(self, tmp_path):
        prog = self.simple_program()
        path = str(tmp_path / "replay.tsv")
        records = [(BASE_ADDR, i, print_stmt_body(s)) for i, s in
                   enumerate(prog.blocks[BASE_ADDR].stmts) if i != 0]
        records = [
            (addr, i, "t1 = Add64(t0,0x0000000000000001)") if i == 2 else (addr, i, raw)
            for addr, i, raw in records
        ]
        write_replay_file(path, records)
        cfg = BackendConfig(kind="replay", replay_path=path)
        out, log = optimize_program(prog, 10, cfg)
        entry = next(e for e in log.entries if e.stmt_index == 2)
        assert not entry.retained
        assert entry.verdict.kind is VerdictKind.MISMATCH
        assert out.blocks[BASE_ADDR].stmts[2] == prog.blocks[BASE_ADDR].stmts[2]
        assert not log.any_final_mismatch

    def test_identical_replacement_is_not_retained(self, tmp_path):
        prog = self.simple_program()
        path = str(tmp_path / "replay.tsv")
        records = [
            (BASE_ADDR, i, print_stmt_body(s))
            for i, s in enumerate(prog.blocks[BASE_ADDR].stmts)
            if i != 0
        ]
        write_replay_file(path, records)
        cfg = BackendConfig(kind="replay", replay_path=path)
        out, log = optimize_program(prog, 10, cfg)
        assert out.blocks == prog.blocks
        assert all(not e.retained for e in log.entries)
        assert any("identical" in e.reason for e in log.entries)

    def test_replay_miss_propagates(self, tmp_path):
        prog = self.simple_program()
        path = str(tmp_path / "replay.tsv")
        write_replay_file(path, [(BASE_ADDR, 2, "t1 = t0")])
        cfg = BackendConfig(kind="replay", replay_path=path)
        with pytest.raises(ReplayMissError):
            optimize_program(prog, 10, cfg)

    def test_config_error_propagates(self):
        prog = self.simple_program()
        with pytest.raises(ConfigError):
            optimize_program(prog, 5, BackendConfig(kind="llm"))

    def test_output_validates_and_preserves_control_flow(self):
        from liftir.corpus import generate, preset_config

        prog, _ = generate(preset_config("counter", seed=3))
        out, log = optimize_program(prog, 200)
        assert log.retained_count > 0
        assert not log.any_final_mismatch
        for addr, block in out.blocks.items():
            orig = prog.blocks[addr]
            assert validate(block) == []
            assert block.next == orig.next
            assert block.next_jumpkind == orig.next_jumpkind
            exits = [s for s in block.stmts if s.__class__.__name__ == "Exit"]
            orig_exits = [s for s in orig.stmts if s.__class__.__name__ == "Exit"]
            assert exits == orig_exits

    def test_log_serializes_to_json(self, tmp_path):
        prog = self.simple_program()
        _, log = optimize_program(prog, 10)
        blob = json.dumps(log.as_json_dict(), sort_keys=True)
        data = json.loads(blob)
        assert data["candidates"] == len(log.entries)
        assert data["retained"] == log.retained_count
        for entry in data["entries"]:
            assert set(entry) >= {"block_addr", "stmt_index", "original", "retained"}
