"""Assemble a small bb program, look at the words, and disassemble them back."""
from bbrv import asm, isa

SRC = """
    .text
_start:
    bb      2, 1            # two instructions, sequential
    add     a0, a0, a1
    lcnt    3, lc1          # set 1 runs three times
body:
    bb      2, 0, 01, 01    # loop start and end on set 1
    add     a1, a2, a2
    mul     a2, a1, a2
    bb      3, 0
    li      a7, 93
    ecall
    j       _start
"""

img = asm.assemble_text(SRC)
print(f"entry {img.entry:#x}, {len(img.code) // 4} words")
for k, word in enumerate(img.words()):
    ins = isa.decode(word)
    print(f"  {img.base + 4 * k:#010x}  {word:08x}  {isa.format_instruction(ins)}")

# bb fields straight from the encoding
bb = isa.decode(img.words()[3])
print("second header:", bb.n, "instructions, seq =", bb.seq, "start/end sets =", bb.sflags, bb.eflags)

# round trip through text
text = asm.format_source(asm.disassemble(img))
assert asm.assemble_text(text).code == img.code
print(text)

# errors carry the source line
try:
    asm.assemble_text("addi a0, a0, 5000\n")
except asm.ImmediateOutOfRange as e:
    print("rejected:", e)
