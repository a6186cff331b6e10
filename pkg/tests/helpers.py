from npupg.program import Instr, Program, VUOp


def bare_program(chip, instrs, allocs=()) -> Program:
    return Program(chip.name, chip.num_sa, chip.num_vu, chip.sa_width, chip.sram_bytes,
                   chip.sram_segment_bytes, list(instrs), list(allocs))


def vu_stream(chip, cycles, vu_mask=1):
    """One-cycle VU ops on ``vu_mask`` issued at the given cycles."""
    return bare_program(chip, [Instr(VUOp(vu_mask, 1), 1, 1, cycle=c) for c in cycles])


ACCEPTANCE: list[str] = []  # acceptance verdict lines, echoed in the terminal summary
