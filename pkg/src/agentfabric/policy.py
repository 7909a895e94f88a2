"""Attribute access policies and sealed task requests.

A policy is a boolean formula over ``has(tag)`` literals. Sealing a request
does no cryptography: the payload is simply withheld unless the caller's
attribute set satisfies the policy. Text syntax::

    has(translator) & !(has(banned) | has(suspended))

An empty string is the constant-true policy.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Union


class AccessDenied(PermissionError):
    """Attributes do not satisfy the sealed request's policy."""


class PolicySyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class Has:
    tag: str

    def __str__(self):
        return f"has({self.tag})"


@dataclass(frozen=True)
class Const:
    value: bool = True

    def __str__(self):
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Not:
    operand: "Policy"

    def __str__(self):
        return f"!{_wrap(self.operand)}"


@dataclass(frozen=True)
class And:
    operands: tuple["Policy", ...]

    def __str__(self):
        return " & ".join(_wrap(o) for o in self.operands)


@dataclass(frozen=True)
class Or:
    operands: tuple["Policy", ...]

    def __str__(self):
        return " | ".join(_wrap(o) for o in self.operands)


Policy = Union[Has, Const, Not, And, Or]
ALLOW_ALL = Const(True)


def _wrap(p: Policy) -> str:
    return f"({p})" if isinstance(p, (And, Or)) else str(p)


def satisfies(attributes: Iterable[str], policy: Policy) -> bool:
    attrs = attributes if isinstance(attributes, (set, frozenset)) else set(attributes)
    return _eval(attrs, policy)


def _eval(attrs, p: Policy) -> bool:
    if isinstance(p, Has):
        return p.tag in attrs
    if isinstance(p, Const):
        return p.value
    if isinstance(p, Not):
        return not _eval(attrs, p.operand)
    if isinstance(p, And):
        return all(_eval(attrs, o) for o in p.operands)
    if isinstance(p, Or):
        return any(_eval(attrs, o) for o in p.operands)
    raise TypeError(f"not a policy node: {p!r}")


def policy_tags(p: Policy) -> frozenset[str]:
    if isinstance(p, Has):
        return frozenset({p.tag})
    if isinstance(p, Const):
        return frozenset()
    if isinstance(p, Not):
        return policy_tags(p.operand)
    return frozenset().union(*(policy_tags(o) for o in p.operands))


_TOKEN = re.compile(r"\s*(?:(has)\s*\(\s*([^()\s&|!]+)\s*\)|(true|false)\b|([&|!()]))")


def parse_policy(text: str) -> Policy:
    """Parse the ``has(tag) & | ! ( )`` grammar; ``!`` binds tightest, then ``&``, then ``|``."""
    tokens = []
    pos = 0
    text = text or ""
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise PolicySyntaxError(f"unexpected input at column {pos + 1}: {text[pos:pos + 12]!r}")
        if m.group(1):
            tokens.append(("has", m.group(2)))
        elif m.group(3):
            tokens.append(("const", m.group(3) == "true"))
        else:
            tokens.append((m.group(4), None))
        pos = m.end()
    if not tokens:
        return ALLOW_ALL

    i = 0

    def peek():
        return tokens[i][0] if i < len(tokens) else None

    def take(kind):
        nonlocal i
        if peek() != kind:
            raise PolicySyntaxError(f"expected {kind!r} in policy {text!r}")
        tok = tokens[i]
        i += 1
        return tok

    def parse_or():
        parts = [parse_and()]
        while peek() == "|":
            take("|")
            parts.append(parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and():
        parts = [parse_unary()]
        while peek() == "&":
            take("&")
            parts.append(parse_unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_unary():
        kind = peek()
        if kind == "!":
            take("!")
            return Not(parse_unary())
        if kind == "(":
            take("(")
            inner = parse_or()
            take(")")
            return inner
        if kind == "has":
            return Has(take("has")[1])
        if kind == "const":
            return Const(take("const")[1])
        raise PolicySyntaxError(f"unexpected token {kind!r} in policy {text!r}")

    result = parse_or()
    if i != len(tokens):
        raise PolicySyntaxError(f"trailing tokens in policy {text!r}")
    return result


class SealedRequest:
    """A request whose payload is released only to qualifying attribute sets."""

    __slots__ = ("policy", "_payload")

    def __init__(self, payload, policy: Policy):
        self.policy = policy
        self._payload = payload

    def open(self, attributes: Iterable[str]):
        if not satisfies(attributes, self.policy):
            raise AccessDenied(f"attributes do not satisfy policy {self.policy}")
        return self._payload

    def __repr__(self):
        return f"SealedRequest(policy={self.policy})"


def seal(request, policy: Policy | None = None) -> SealedRequest:
    if policy is None:
        policy = getattr(request, "policy", ALLOW_ALL)
    return SealedRequest(request, policy)


def open_sealed(sealed: SealedRequest, attributes: Iterable[str]):
    return sealed.open(attributes)
