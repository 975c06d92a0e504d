"""Reserved memory map shared by the interpreter and the rewriter.

Programs, stack, contexts and the trash region live in one word-addressable
space so that a single masking formula can redirect any access to the trash.
"""

from __future__ import annotations

WORD_BITS = 64
WORD_MASK = (1 << WORD_BITS) - 1
ALL_ONES = WORD_MASK

MEMORY_WORDS = 1 << 16
STACK_SLOT = 8

# Stack grows downward from just below the context slab
STACK_TOP = 0xE000

SLAB_BASE = 0xE000
TRASH_BASE = 0xF000
TRASH_END = MEMORY_WORDS
TRASH_ADDRESS = 0xF800
JUMP_SLOT = 0xFF00
EMPTY_RECORD = 0xFFFF

# Everything at or above this address is excluded from passivity checks
RESERVED_BASE = SLAB_BASE

# Every node saves r0..r5. r6/r7 are emitter scratch; a program using them
# gets them spilled to their slab slots around the emitted gadgets.
GENERAL_REGISTERS = 8
SP = 8
SAVED_REGISTERS = (0, 1, 2, 3, 4, 5)
SCRATCH_REGISTERS = (6, 7)

# Context slab: r0..r7 at +0..+7, sp at +8, then routing words
SLAB_SP_OFFSET = 8
M_SLOT = SLAB_BASE + 0x10
PM_SLOT = SLAB_BASE + 0x11
NPM_SLOT = SLAB_BASE + 0x12
R_SLOT = SLAB_BASE + 0x13
PATH_SLOT = SLAB_BASE + 0x14
NEXT_SLOT = SLAB_BASE + 0x15
HOP_SLOT = SLAB_BASE + 0x16
CMPD_SLOT = SLAB_BASE + 0x17
OUTBUF_SLOT = SLAB_BASE + 0x18  # two words: [1, value]
SPILL_SLOT = SLAB_BASE + 0x1A  # two words parking registers around a gadget

# Route word: bits 0-5 decision count, bits 6-63 direction bits
ROUTE_COUNT_BITS = 6
ROUTE_COUNT_MASK = (1 << ROUTE_COUNT_BITS) - 1
MAX_ROUTE_DECISIONS = WORD_BITS - ROUTE_COUNT_BITS

MAX_OUT_RECORD = 64


def in_trash(address: int) -> bool:
    """Whether an address lies inside the trash region."""
    return TRASH_BASE <= address < TRASH_END


def is_reserved(address: int) -> bool:
    """Whether an address belongs to the slab or the trash region."""
    return address >= RESERVED_BASE
