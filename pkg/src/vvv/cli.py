"""Command line: keygen, enroll, verify, eval, revoke.

Exit codes: 0 success or accept, 1 reject (including revoked), 2 usage
error or unknown id, 3 wrong password or integrity failure.
"""
from __future__ import annotations

import argparse
import getpass
import json
import logging
import math
import os
import re
import shutil
import sys
from collections.abc import MutableMapping
from pathlib import Path

from . import __version__
from . import evaluation as ev
from .gmm import ScoreDirection
from .protocol import Server, ServerRejected, VerifyPolicy, WrongPasswordError
from .protocol import run_enrollment, run_verification
from .protocol.wire import ErrorCode
from .vault import SALT_BYTES, AuthenticationError, EnrollmentRecord, FormatError, ServerKey, revoke

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_USAGE = 2
EXIT_INTEGRITY = 3

PASSWORD_ENV = "VVV_PASSWORD"
RECORD_SUFFIX = ".vvr"
_USER_ID = re.compile(r"[A-Za-z0-9_-][A-Za-z0-9._-]{0,127}")

log = logging.getLogger("vvv")


class UsageError(Exception):
    pass


class RecordStore(MutableMapping):
    """Directory of ``<user>.vvr`` files; writes are temp-then-rename."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, user_id):
        if not _USER_ID.fullmatch(user_id):
            raise UsageError(f"invalid user id {user_id!r}")
        return self.root / f"{user_id}{RECORD_SUFFIX}"

    def __getitem__(self, user_id):
        path = self.path_for(user_id)
        if not path.is_file():
            raise KeyError(user_id)
        return EnrollmentRecord.from_bytes(path.read_bytes())

    def __setitem__(self, user_id, record):
        self.root.mkdir(parents=True, exist_ok=True)
        ev.atomic_write(self.path_for(user_id), record.to_bytes())

    def __delitem__(self, user_id):
        path = self.path_for(user_id)
        if not path.is_file():
            raise KeyError(user_id)
        path.unlink()

    def __iter__(self):
        if not self.root.is_dir():
            return iter(())
        return iter(sorted(p.stem for p in self.root.glob(f"*{RECORD_SUFFIX}")))

    def __len__(self):
        return sum(1 for _ in self)


# ---------------------------------------------------------------- helpers


def parse_synth(text):
    """``speakers=S,phrases=P,takes=T,separation=x``; omitted keys keep defaults."""
    params = dict(speakers=10, phrases=10, takes=8, separation=ev.DEFAULT_SEPARATION)
    if text:
        for item in text.split(","):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in params:
                raise UsageError(f"bad --synth item {item!r}")
            try:
                params[key] = float(value) if key == "separation" else int(value)
            except ValueError:
                raise UsageError(f"bad --synth value {item!r}") from None
    if not params["separation"] > 0:
        raise UsageError("separation must be > 0")
    return params


def load_corpus(args):
    if args.corpus:
        try:
            return ev.load_mit_layout(args.corpus)
        except ev.CorpusError as exc:
            raise UsageError(str(exc)) from None
    p = parse_synth(args.synth)
    try:
        return ev.synth_corpus(p["speakers"], p["phrases"], p["takes"], p["separation"], args.seed)
    except ev.CorpusError as exc:
        raise UsageError(str(exc)) from None


def read_password():
    pw = os.environ.get(PASSWORD_ENV)
    if pw is None:
        pw = getpass.getpass("password: ")
    if not pw:
        raise UsageError(f"empty password (set {PASSWORD_ENV} or type one)")
    return pw


def load_server_key(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no server key at {path} (run keygen)")
    return ServerKey.from_bytes(path.read_bytes())


def _takes(corpus, split, speaker, phrases, which):
    if speaker not in corpus.clips:
        raise UsageError(f"speaker {speaker!r} not in corpus")
    out = {}
    for p in phrases:
        if p not in corpus.clips[speaker]:
            raise UsageError(f"speaker {speaker!r} has no phrase {p!r}")
        if which == "imposter":
            utts = corpus.takes(speaker, p, sessions=(ev.IMPOSTER_SESSION,))
        else:
            takes = corpus.takes(speaker, p)
            utts = [takes[i] for i in getattr(split, which)[(speaker, p)]]
        out[p] = [u.clip for u in utts]
    return out


def _server(key, corpus, store):
    return Server(key, corpus.common_phrases(), store, VerifyPolicy())


# ---------------------------------------------------------------- commands


def cmd_keygen(args):
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists (use --force to overwrite)")
    key = ServerKey.generate(args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.atomic_write(out, key.to_bytes())
    print(f"server key {key.key_id} written to {out}")
    print(f"user salt template: {os.urandom(SALT_BYTES).hex()}")
    return EXIT_OK


def cmd_enroll(args):
    key = load_server_key(args.key)
    corpus = load_corpus(args)
    store = RecordStore(args.store)
    speaker = args.speaker or args.user
    split = ev.make_split(corpus, args.seed)
    phrases = corpus.common_phrases()
    utterances = _takes(corpus, split, speaker, phrases, "gallery")
    bank = ev.ModelBank(corpus, split)
    pool = {p: [m for s in corpus.speakers if s != speaker
                for m in [bank.gallery(s, p)] if m is not None] for p in phrases}
    password = read_password()
    server = _server(key, corpus, store)
    try:
        record = run_enrollment(args.user, password, utterances, server, pool,
                                bits_per_question=args.bits_per_question, rng=args.seed)
    except ServerRejected as exc:
        if exc.code is ErrorCode.DUPLICATE:
            raise UsageError(str(exc)) from None
        raise
    print(f"enrolled {args.user}: {len(record.pairs)} pairs in {store.path_for(args.user)}")
    return EXIT_OK


def cmd_verify(args):
    key = load_server_key(args.key)
    store = RecordStore(args.store)
    if args.user not in store:
        raise UsageError(f"unknown user id {args.user!r}")
    record = store[args.user]
    if record.revoked:
        print(f"{args.user}: record revoked, no challenge issued")
        return EXIT_REJECT
    corpus = load_corpus(args)
    split = ev.make_split(corpus, args.seed)
    speaker = args.as_speaker or args.user
    which = "imposter" if args.imposter else "probe"
    utterances = _takes(corpus, split, speaker, corpus.common_phrases(), which)
    password = read_password()
    server = _server(key, corpus, store)
    server.policy.bits_per_question = record_bits(record)
    direction = ScoreDirection(args.direction)
    decision = run_verification(args.user, password, utterances, server,
                                theta=args.threshold, n=args.pairs, direction=direction)
    acc = decision.correct / decision.total
    verdict = "ACCEPT" if decision.accept else "REJECT"
    print(f"{verdict} {args.user}: {decision.correct}/{decision.total} bits correct "
          f"(accuracy {acc:.4f}, threshold {decision.threshold})")
    return EXIT_OK if decision.accept else EXIT_REJECT


def record_bits(record):
    return max(1, (len(record.pairs[0].blocks) - 1).bit_length())


def cmd_revoke(args):
    store = RecordStore(args.store)
    if args.user not in store:
        raise UsageError(f"unknown user id {args.user!r}")
    store[args.user] = revoke(store[args.user])
    print(f"revoked {args.user}")
    return EXIT_OK


def cmd_eval(args):
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists (use --force to overwrite)")
    corpus = load_corpus(args)
    split = ev.make_split(corpus, args.seed)
    bank = ev.ModelBank(corpus, split)
    gv, pv = ScoreDirection.GALLERY_VARIANCE, ScoreDirection.PROBE_VARIANCE
    runs = {
        "baseline-1": ev.run_baseline(corpus, split, gv, bank),
        "baseline-2": ev.run_baseline(corpus, split, pv, bank),
        "vaulted-dedicated": ev.run_vaulted(corpus, split, gv, "dedicated", args.seed, bank),
        "vaulted-all-vs-all": ev.run_vaulted(corpus, split, gv, "all_vs_all", args.seed, bank),
    }
    n_phrases = len(corpus.common_phrases())
    b = args.bits_per_question
    reports = [ev.security_report(n_phrases, b, keys_compromised=True),
               ev.security_report(n_phrases, b, keys_compromised=False)]
    mc = ev.random_responder_acceptance(n_phrases * b, 100_000, theta=1.0, rng_seed=args.seed)

    tmp = out.with_name(f".{out.name}.tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    summary = {}
    for name, (outcomes, roc) in runs.items():
        ref = {name: ev.REFERENCE_EER[name]}
        if name == "vaulted-all-vs-all":
            ref["prior-scheme-scenario-ii"] = ev.REFERENCE_EER["prior-scheme-scenario-ii"]
        (tmp / f"{name}_roc.csv").write_text(roc.to_csv(ref), encoding="utf-8")
        (tmp / f"{name}_outcomes.csv").write_text(ev.outcomes_to_csv(outcomes), encoding="utf-8")
        summary[name] = dict(eer=roc.eer, eer_threshold=roc.eer_threshold,
                             genuine=sum(o.genuine for o in outcomes),
                             imposter=sum(not o.genuine for o in outcomes))
    text = "".join(r.to_text() + "\n" for r in reports)
    text += f"monte_carlo_random_responder_accept_rate={mc!r} (100000 trials, theta=1.0)\n"
    (tmp / "security_report.txt").write_text(text, encoding="utf-8")
    config = dict(version=__version__, seed=args.seed, bits_per_question=b,
                  corpus=args.corpus or None, synth=None if args.corpus else parse_synth(args.synth),
                  speakers=len(corpus.speakers), phrases=n_phrases, summary=summary)
    (tmp / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True, default=_json_num) + "\n",
                                     encoding="utf-8")
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)
    for name, s in summary.items():
        print(f"{name:20s} EER {s['eer'] * 100:6.2f}%  ({s['genuine']} genuine, {s['imposter']} imposter)")
    print(reports[0].to_text().rstrip())
    print(f"wrote {out}")
    return EXIT_OK


def _json_num(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    raise TypeError(type(x))


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="vvv", description="Vaulted voice verification")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, corpus=True, store=True, key=True):
        sp.add_argument("--seed", type=int, default=42)
        if store:
            sp.add_argument("--store", default="vvv-records", help="record directory")
        if key:
            sp.add_argument("--key", default="server.key", help="server key file")
        if corpus:
            src = sp.add_mutually_exclusive_group()
            src.add_argument("--corpus", help="MIT-layout corpus root")
            src.add_argument("--synth", default="",
                             help="speakers=S,phrases=P,takes=T,separation=x")

    k = sub.add_parser("keygen", help="create a server key")
    k.add_argument("--out", default="server.key")
    k.add_argument("--force", action="store_true")
    k.add_argument("--seed", type=int, default=None, help="deterministic key (testing only)")
    k.set_defaults(func=cmd_keygen)

    e = sub.add_parser("enroll", help="enroll a user from corpus audio")
    e.add_argument("user")
    e.add_argument("--speaker", help="corpus speaker whose voice enrolls (default: user)")
    e.add_argument("--bits-per-question", type=int, default=1)
    common(e)
    e.set_defaults(func=cmd_enroll)

    v = sub.add_parser("verify", help="run one challenge-response session")
    v.add_argument("user", help="claimed id")
    v.add_argument("--as", dest="as_speaker", help="corpus speaker who is talking (default: user)")
    v.add_argument("--imposter", action="store_true", help="use the claimed id's imposter session")
    v.add_argument("--pairs", type=int, default=None)
    v.add_argument("--threshold", type=float, default=None)
    v.add_argument("--direction", choices=[d.value for d in ScoreDirection],
                   default=ScoreDirection.GALLERY_VARIANCE.value)
    common(v)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("revoke", help="revoke a user's record")
    r.add_argument("user")
    common(r, corpus=False, key=False)
    r.set_defaults(func=cmd_revoke)

    x = sub.add_parser("eval", help="baselines, vaulted experiments, ROC CSVs")
    x.add_argument("--out", default="vvv-eval")
    x.add_argument("--force", action="store_true")
    x.add_argument("--bits-per-question", type=int, default=1)
    common(x, store=False, key=False)
    x.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WrongPasswordError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (AuthenticationError, FormatError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ServerRejected as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        if exc.code in (ErrorCode.REVOKED,):
            return EXIT_REJECT
        if exc.code in (ErrorCode.UNKNOWN_USER, ErrorCode.DUPLICATE, ErrorCode.BAD_REQUEST):
            return EXIT_USAGE
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
