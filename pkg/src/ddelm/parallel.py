"""Multi-process execution of the subdomain work.

The coordinator (the calling process) runs CG and owns the interface vector.
Each worker process owns a contiguous range of subdomain ids, rebuilds their
blocks from the ``DdmCase`` it receives in CONFIG, factorizes them once and
then answers requests synchronously:

    CONFIG  -> READY     one info vector per owned subdomain
    SCATTER -> CONTRIB   one block per owned subdomain (stage echoed)
    SOLVE   -> COEFFS    back-solved coefficients per owned subdomain
    DONE                 worker exits

A Schur matvec is two SCATTER/CONTRIB rounds (flux stage, then interface
stage), i.e. four messages per worker per CG iteration.
"""

from __future__ import annotations

import json
import multiprocessing as mp
import time
import traceback
import warnings
from collections import Counter

import numpy as np

from .assembly import assemble_local, flux_size, interface_size
from .case import DdmCase
from .linalg import DEFAULT_RCOND, RankWarning
from .messages import Kind, Message, ProtocolError, Stage, decode, encode
from .solver import LocalSystem, SerialExecutor, solve_ddm

_METHODS = ("qr", "svd")
_INFO_FIELDS = ("rows", "cols", "rank", "rcond", "method", "t_factorize", "t_assemble")


class WorkerError(RuntimeError):
    pass


def _send(conn, msg: Message):
    conn.send_bytes(encode(msg))


def _info_vector(info: dict) -> np.ndarray:
    return np.array([
        info["rows"], info["cols"], info["rank"], info["rcond"],
        _METHODS.index(info["method"]), info["t_factorize"], info["t_assemble"],
    ], dtype=float)


def _info_dict(sid: int, vec) -> dict:
    d = dict(zip(_INFO_FIELDS, vec))
    for key in ("rows", "cols", "rank"):
        d[key] = int(d[key])
    d["method"] = _METHODS[int(d["method"])]
    return {"sid": sid, **d}


def worker_main(conn) -> None:
    """Serve one coordinator over ``conn`` until DONE or an error."""
    systems: dict[int, LocalSystem] = {}
    try:
        while True:
            msg = decode(conn.recv_bytes())
            if msg.kind == Kind.CONFIG:
                cfg = json.loads(msg.text)
                case = DdmCase.from_json(cfg["case"])
                problem, layout = case.build_problem(), case.build_layout()
                n_gamma, n_flux = interface_size(problem, layout), flux_size(problem, layout)
                blocks = []
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RankWarning)
                    for sid in cfg["sids"]:
                        t0 = time.perf_counter()
                        local = assemble_local(problem, layout, sid, case.build_basis(layout, sid))
                        t_asm = time.perf_counter() - t0
                        systems[sid] = LocalSystem(local, n_gamma, n_flux, cfg.get("rcond", DEFAULT_RCOND))
                        blocks.append((sid, _info_vector({**systems[sid].info(), "t_assemble": t_asm})))
                _send(conn, Message(Kind.READY, blocks=blocks))
            elif msg.kind == Kind.SCATTER:
                if msg.stage == Stage.RHS:
                    out = [(sid, s.flux_stage(None)) for sid, s in systems.items()]
                elif msg.stage == Stage.TRACE:
                    u = msg.blocks[0][1]
                    out = [(sid, s.flux_stage(u)) for sid, s in systems.items()]
                elif msg.stage == Stage.FLUX:
                    y = msg.blocks[0][1]
                    out = [(sid, s.interface_stage(y)) for sid, s in systems.items()]
                else:
                    raise ProtocolError(f"SCATTER with stage {msg.stage!r}")
                _send(conn, Message(Kind.CONTRIB, msg.stage, msg.iteration, out))
            elif msg.kind == Kind.SOLVE:
                u = msg.blocks[0][1] if msg.blocks else np.zeros(0)
                out = [(sid, s.backsolve(u)) for sid, s in systems.items()]
                _send(conn, Message(Kind.COEFFS, blocks=out))
            elif msg.kind == Kind.DONE:
                break
            else:
                raise ProtocolError(f"unexpected message kind {msg.kind!r}")
    except (EOFError, KeyboardInterrupt):
        pass
    except Exception:
        try:
            _send(conn, Message(Kind.ERROR, blocks=[(-1, traceback.format_exc())]))
        except (OSError, EOFError):
            pass
    finally:
        conn.close()


class ProcessExecutor:
    """Subdomains spread over ``workers`` processes in contiguous id ranges."""

    def __init__(self, case: DdmCase, workers: int = 2, rcond=DEFAULT_RCOND, *,
                 start_method="spawn", timeout=600.0):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.case = case
        self.rcond = rcond
        self.timeout = timeout
        problem, layout = case.build_problem(), case.build_layout()
        self.n_gamma = interface_size(problem, layout)
        self.n_flux = flux_size(problem, layout)
        n_sub = layout.n_subdomains
        self.assignment = [
            [int(s) for s in chunk] for chunk in np.array_split(np.arange(n_sub), min(workers, n_sub))
        ]
        self._ctx = mp.get_context(start_method)
        self._procs, self._conns = [], []
        self.messages = Counter()
        self.subdomain_info = []

    @property
    def n_workers(self) -> int:
        return len(self.assignment)

    def _start(self):
        for w in range(self.n_workers):
            parent, child = self._ctx.Pipe()
            proc = self._ctx.Process(target=worker_main, args=(child,), name=f"ddelm-worker-{w}", daemon=True)
            try:
                proc.start()
            except Exception as exc:
                self.close()
                raise WorkerError(f"could not launch worker {w}: {exc}") from exc
            child.close()
            self._procs.append(proc)
            self._conns.append(parent)

    def _post(self, w, msg: Message):
        try:
            _send(self._conns[w], msg)
        except (OSError, EOFError) as exc:
            raise WorkerError(f"worker {w} is unreachable: {exc}") from exc
        self.messages[msg.kind.name.lower()] += 1

    def _fetch(self, w, expect: Kind, stage=None, iteration=None) -> Message:
        conn, proc = self._conns[w], self._procs[w]
        deadline = time.monotonic() + self.timeout
        while not conn.poll(0.5):
            if not proc.is_alive():
                raise WorkerError(f"worker {w} exited with code {proc.exitcode}")
            if time.monotonic() > deadline:
                raise WorkerError(f"worker {w} timed out after {self.timeout:g} s")
        try:
            msg = decode(conn.recv_bytes())
        except (EOFError, OSError) as exc:
            raise WorkerError(f"worker {w} closed its connection: {exc}") from exc
        if msg.kind == Kind.ERROR:
            raise WorkerError(f"worker {w} failed:\n{msg.text}")
        if msg.kind != expect or (stage is not None and msg.stage != stage) or (
                iteration is not None and msg.iteration != iteration):
            raise ProtocolError(
                f"worker {w}: expected {expect.name}/{stage}/{iteration}, "
                f"got {msg.kind.name}/{msg.stage.name}/{msg.iteration}"
            )
        self.messages[msg.kind.name.lower()] += 1
        return msg

    def _round(self, kind: Kind, reply: Kind, stage=Stage.NONE, iteration=0, payload=None):
        blocks = [] if payload is None else [(-1, payload)]
        for w in range(self.n_workers):
            self._post(w, Message(kind, stage, iteration, blocks))
        out = []
        for w in range(self.n_workers):
            out.extend(self._fetch(w, reply, stage, iteration).blocks)
        return out

    def setup(self):
        self._start()
        case_json = self.case.to_json()
        for w, sids in enumerate(self.assignment):
            cfg = json.dumps({"case": case_json, "sids": sids, "rcond": self.rcond})
            self._post(w, Message(Kind.CONFIG, blocks=[(-1, cfg)]))
        info = []
        for w in range(self.n_workers):
            info.extend(_info_dict(sid, vec) for sid, vec in self._fetch(w, Kind.READY).blocks)
        self.subdomain_info = sorted(info, key=lambda d: d["sid"])
        n_svd = sum(d["method"] == "svd" for d in self.subdomain_info)
        if n_svd:
            warnings.warn(f"{n_svd} subdomain blocks fell back to truncated SVD", RankWarning, stacklevel=2)
        return self.subdomain_info

    def flux_stage(self, u_gamma, iteration=0):
        if u_gamma is None:
            return self._round(Kind.SCATTER, Kind.CONTRIB, Stage.RHS, iteration)
        return self._round(Kind.SCATTER, Kind.CONTRIB, Stage.TRACE, iteration, u_gamma)

    def interface_stage(self, y, iteration=0):
        return self._round(Kind.SCATTER, Kind.CONTRIB, Stage.FLUX, iteration, y)

    def backsolve(self, u_gamma):
        payload = u_gamma if len(u_gamma) else None
        return dict(self._round(Kind.SOLVE, Kind.COEFFS, payload=payload))

    def close(self):
        for w, conn in enumerate(self._conns):
            try:
                _send(conn, Message(Kind.DONE))
                self.messages["done"] += 1
            except (OSError, EOFError):
                pass
        for proc in self._procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()
                proc.join()
        for conn in self._conns:
            conn.close()
        self._procs, self._conns = [], []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def solve_case(case: DdmCase, *, workers: int = 0, cg_tol=1e-9, max_iter=None, rcond=DEFAULT_RCOND):
    """Build everything from ``case`` and run the DDM solve.

    Returns ``(problem, layout, Solution, Diagnostics)``.
    """
    problem, layout = case.build_problem(), case.build_layout()
    bases = case.build_bases(layout)
    if workers <= 0:
        executor = SerialExecutor(problem, layout, bases, rcond)
    else:
        executor = ProcessExecutor(case, workers, rcond)
    with executor:
        sol, diag = solve_ddm(problem, layout, bases, cg_tol=cg_tol, max_iter=max_iter,
                              executor=executor, rcond=rcond)
    if workers > 0:
        diag.messages = {**diag.messages, "workers": executor.n_workers}
    return problem, layout, sol, diag
