"""Run bb programs on the reference interpreter: delayed redirects, loop counters, exceptions."""
from bbrv import asm, refmodel
from bbrv.refmodel import Mode

# the branch sits first in its block but takes effect only after the add
delayed = asm.assemble_text("""
    bb      2, 0
    beq     zero, zero, out
    addi    a0, a0, 1
    bb      1, 1
    addi    a0, a0, 100     # skipped
out:
    bb      3, 0
    li      a7, 93
    ecall
    j       0
""")
res = refmodel.run(delayed, Mode.BB)
print("delayed branch:", res.status, [hex(e.addr - delayed.base) for e in res.log.entries])

# fetch order of the loop-counter example: the lcnt/bb pair lets the body repeat without a branch
loop = asm.assemble_text("""
    bb      2, 1, 00, 00
    add     a0, a0, a1
    lcnt    3, lc1
    bb      2, 0, 01, 01
    add     a1, a2, a2
    mul     a2, a1, a2
    bb      3, 0
    li      a7, 93
    ecall
    j       0
""")
order = refmodel.fetch_order_trace(loop)
print("fetch order:", " ".join(f"{a - loop.base:x}" for a in order))

# a second bb inside an announced block raises at once
nested = asm.assemble_text("bb 3, 1\naddi a0, a0, 1\nbb 1, 1\naddi a0, a0, 1\naddi a0, a0, 1\n")
print("nested bb:", refmodel.run(nested, Mode.BB).status)

# plain code: fine in legacy mode, an exception when bb is required
plain = asm.assemble_text("li a0, 7\nli a7, 93\necall\n")
print("legacy:", refmodel.run(plain, Mode.LEGACY).status)
print("bb required:", refmodel.run(plain, Mode.BB).status)
