"""In-memory integer token ledger with escrow.

Every operation is atomic: it either applies completely or raises before
touching state. At all times ``sum(balances) + sum(open escrows) ==
total_minted``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, NamedTuple

JOURNAL_HEADER = ("seq", "op", "from", "to", "amount", "escrow")


class LedgerError(ValueError):
    pass


class UnknownAccount(LedgerError, KeyError):
    pass


class InsufficientFunds(LedgerError):
    pass


class EscrowClosed(LedgerError):
    pass


@dataclass
class Escrow:
    holder: Hashable
    amount: int
    released: bool = False


class JournalEntry(NamedTuple):
    seq: int
    op: str
    src: object
    dst: object
    amount: int
    escrow: str


def _check_amount(amount) -> int:
    if isinstance(amount, bool) or not isinstance(amount, int) or amount <= 0:
        raise LedgerError(f"amount must be a positive integer, got {amount!r}")
    return amount


class Ledger:
    def __init__(self):
        self.accounts: dict[Hashable, int] = {}
        self.escrows: dict[str, Escrow] = {}
        self.total_minted = 0
        self.journal: list[JournalEntry] = []
        self._next_escrow = 0

    def _log(self, op, src, dst, amount, escrow=""):
        self.journal.append(JournalEntry(len(self.journal), op, src, dst, amount, escrow))

    def _require(self, account) -> None:
        if account not in self.accounts:
            raise UnknownAccount(f"unknown account {account!r}")

    def balance(self, account) -> int:
        self._require(account)
        return self.accounts[account]

    def create_account(self, account, exist_ok: bool = False) -> None:
        if account in self.accounts:
            if exist_ok:
                return
            raise LedgerError(f"account {account!r} already exists")
        self.accounts[account] = 0
        self._log("create", "", account, 0)

    def mint(self, account, amount: int) -> None:
        _check_amount(amount)
        self._require(account)
        self.accounts[account] += amount
        self.total_minted += amount
        self._log("mint", "", account, amount)

    def transfer(self, src, dst, amount: int) -> None:
        _check_amount(amount)
        self._require(src)
        self._require(dst)
        if self.accounts[src] < amount:
            raise InsufficientFunds(f"{src!r} holds {self.accounts[src]}, cannot send {amount}")
        self.accounts[src] -= amount
        self.accounts[dst] += amount
        self._log("transfer", src, dst, amount)

    def escrow_lock(self, holder, amount: int) -> str:
        _check_amount(amount)
        self._require(holder)
        if self.accounts[holder] < amount:
            raise InsufficientFunds(f"{holder!r} holds {self.accounts[holder]}, cannot lock {amount}")
        eid = f"E{self._next_escrow}"
        self._next_escrow += 1
        self.accounts[holder] -= amount
        self.escrows[eid] = Escrow(holder, amount)
        self._log("lock", holder, "", amount, eid)
        return eid

    def _open_escrow(self, eid: str) -> Escrow:
        if eid not in self.escrows:
            raise LedgerError(f"unknown escrow {eid!r}")
        esc = self.escrows[eid]
        if esc.released:
            raise EscrowClosed(f"escrow {eid} already released")
        return esc

    def escrow_release(self, eid: str, payouts: Mapping[Hashable, int]) -> int:
        """Pay ``payouts`` out of escrow ``eid``; the remainder returns to the holder.

        Returns the refunded remainder.
        """
        esc = self._open_escrow(eid)
        payouts = {k: v for k, v in payouts.items() if v != 0}
        for payee, amt in payouts.items():
            _check_amount(amt)
            self._require(payee)
        paid = sum(payouts.values())
        if paid > esc.amount:
            raise InsufficientFunds(f"escrow {eid} holds {esc.amount}, cannot pay {paid}")
        esc.released = True
        for payee, amt in payouts.items():
            self.accounts[payee] += amt
            self._log("release", esc.holder, payee, amt, eid)
        remainder = esc.amount - paid
        if remainder:
            self.accounts[esc.holder] += remainder
            self._log("refund", esc.holder, esc.holder, remainder, eid)
        return remainder

    def escrow_refund(self, eid: str) -> int:
        return self.escrow_release(eid, {})

    @property
    def escrowed(self) -> int:
        return sum(e.amount for e in self.escrows.values() if not e.released)

    def conserved(self) -> bool:
        return (sum(self.accounts.values()) + self.escrowed == self.total_minted
                and all(v >= 0 for v in self.accounts.values()))

    def snapshot(self) -> dict:
        return {"accounts": dict(self.accounts),
                "escrows": {k: (e.holder, e.amount, e.released) for k, e in self.escrows.items()},
                "total_minted": self.total_minted}

    def journal_rows(self) -> list[tuple]:
        return [tuple(e) for e in self.journal]
