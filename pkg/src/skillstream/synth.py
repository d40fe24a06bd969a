"""Deterministic 2-D manipulation benchmark.

A point end-effector moves in the unit square, grasping, carrying, and
pushing labeled objects into circular sites. Per-frame "semantic" features
emulate open-world embeddings: each behavior phase (reach/transport/push of
a given object) owns a fixed near-orthogonal unit prototype, mixed with a
small pose component and Gaussian noise. The same state-to-feature map is
used when scripting demonstrations and when rolling out policies, so
discovery and control see one consistent geometry.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InfeasibleProgram
from .trajectory_store import (
    Demonstration,
    Dims,
    Frame,
    Suite,
    TaskSpec,
    save_suite,
)

STEP_MAX = 0.05
GRASP_RADIUS = 0.08
CONTACT_RADIUS = 0.05
SITE_RADIUS = 0.05


@dataclass
class EnvState:
    eef: np.ndarray
    gripper_closed: bool
    held: str | None
    objects: dict[str, np.ndarray]
    t: int = 0


@dataclass(frozen=True)
class Primitive:
    kind: str  # reach | grasp | transport | release | push
    obj: str | None = None
    site: str | None = None


# ---------------------------------------------------------------------------
# feature model


def _proto_vector(proto_seed: int, key: str, dim: int) -> np.ndarray:
    h = zlib.crc32(key.encode("utf-8"))
    rng = np.random.default_rng([proto_seed, h])
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


class FeatureModel:
    """Phase prototypes plus pose mixing and additive noise."""

    def __init__(
        self,
        dim: int,
        gamma: float,
        noise: float,
        proto_seed: int,
        keys: list[str] | None = None,
    ):
        self.dim = dim
        self.gamma = gamma
        self.noise = noise
        self.proto_seed = proto_seed
        self._cache: dict[str, np.ndarray] = {}
        if keys:
            # Orthonormalize the known prototype set (Gram-Schmidt over
            # sorted keys) so unrelated phases have zero feature overlap.
            basis: list[np.ndarray] = []
            for key in sorted(keys):
                v = _proto_vector(proto_seed, key, dim)
                for b in basis:
                    v = v - (v @ b) * b
                v = v / np.linalg.norm(v)
                basis.append(v)
                self._cache[key] = v

    def prototype(self, kind: str, param: str) -> np.ndarray:
        key = f"{kind}:{param}"
        if key not in self._cache:
            self._cache[key] = _proto_vector(self.proto_seed, key, self.dim)
        return self._cache[key]

    def max_abs_cos(self, keys: list[str]) -> float:
        vecs = [_proto_vector(self.proto_seed, k, self.dim) for k in keys]
        worst = 0.0
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                worst = max(worst, abs(float(vecs[i] @ vecs[j])))
        return worst

    def feature(
        self,
        kind: str,
        param: str,
        eef: np.ndarray,
        objects: dict[str, np.ndarray],
        rng: np.random.Generator,
    ) -> np.ndarray:
        pose = np.concatenate([eef] + [objects[k] for k in sorted(objects)])
        pad = np.zeros(self.dim)
        pad[: min(len(pose), self.dim)] = pose[: self.dim]
        out = self.prototype(kind, param) + self.gamma * pad
        if self.noise > 0:
            out = out + rng.normal(0.0, self.noise, size=self.dim)
        return out


def classify_phase(state: EnvState) -> tuple[str, str]:
    """Behavior phase visible in the scene; drives the semantic prototype."""
    if state.held is not None:
        return ("transport", state.held)
    ids = sorted(state.objects)
    dists = [np.linalg.norm(state.eef - state.objects[i]) for i in ids]
    nearest = ids[int(np.argmin(dists))]
    if state.gripper_closed:
        return ("push", nearest)
    return ("reach", nearest)


# ---------------------------------------------------------------------------
# environment


def parse_goal(goal_id: str) -> list[tuple[str, str, str]]:
    """Goal predicates: '+'-joined conjunction of 'in_site:<obj>:<site>' terms."""
    terms = []
    for part in goal_id.split("+"):
        bits = part.split(":")
        if len(bits) != 3 or bits[0] != "in_site":
            raise ValueError(f"unknown goal term {part!r}")
        terms.append((bits[0], bits[1], bits[2]))
    return terms


class ManipulationEnv:
    """Single-episode environment for one task of a generated scene."""

    def __init__(
        self,
        objects: dict[str, np.ndarray],
        sites: dict[str, tuple[np.ndarray, float]],
        feature_model: FeatureModel,
        goal_id: str,
        eef_start: np.ndarray,
        init_gripper_closed: bool = False,
        horizon: int = 80,
        jitter: float = 0.02,
        step_max: float = STEP_MAX,
        grasp_radius: float = GRASP_RADIUS,
        contact_radius: float = CONTACT_RADIUS,
    ):
        self.nominal_objects = {k: np.asarray(v, dtype=float) for k, v in objects.items()}
        self.sites = {k: (np.asarray(c, dtype=float), float(r)) for k, (c, r) in sites.items()}
        self.fm = feature_model
        self.goal_terms = parse_goal(goal_id)
        self.eef_start = np.asarray(eef_start, dtype=float)
        self.init_gripper_closed = init_gripper_closed
        self.horizon = horizon
        self.jitter = jitter
        self.step_max = step_max
        self.grasp_radius = grasp_radius
        self.contact_radius = contact_radius
        self.state: EnvState | None = None
        self._rng: np.random.Generator | None = None

    def reset(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        self._rng = np.random.default_rng(seed)
        objs = {
            k: np.clip(v + self._rng.uniform(-self.jitter, self.jitter, size=2), 0.0, 1.0)
            for k, v in self.nominal_objects.items()
        }
        eef = np.clip(
            self.eef_start + self._rng.uniform(-self.jitter, self.jitter, size=2), 0.0, 1.0
        )
        self.state = EnvState(
            eef=eef,
            gripper_closed=self.init_gripper_closed,
            held=None,
            objects=objs,
            t=0,
        )
        return self.observe()

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.state
        kind, param = classify_phase(s)
        feature = self.fm.feature(kind, param, s.eef, s.objects, self._rng)
        proprio = np.array([s.eef[0], s.eef[1], 1.0 if s.gripper_closed else 0.0])
        return feature, proprio

    def phase(self) -> tuple[str, str]:
        return classify_phase(self.state)

    def step(self, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.state
        dx = float(np.clip(action[0], -self.step_max, self.step_max))
        dy = float(np.clip(action[1], -self.step_max, self.step_max))
        grip = float(action[2])

        if grip > 0.5 and not s.gripper_closed:
            s.gripper_closed = True
            ids = sorted(s.objects)
            dists = [np.linalg.norm(s.eef - s.objects[i]) for i in ids]
            nearest = ids[int(np.argmin(dists))]
            if dists[int(np.argmin(dists))] <= self.grasp_radius:
                s.held = nearest
        elif grip < -0.5 and s.gripper_closed:
            s.gripper_closed = False
            s.held = None

        contact = None
        if s.held is None and s.gripper_closed:
            for i in sorted(s.objects):
                if np.linalg.norm(s.eef - s.objects[i]) <= self.contact_radius:
                    contact = i
                    break

        delta = np.array([dx, dy])
        s.eef = np.clip(s.eef + delta, 0.0, 1.0)
        if s.held is not None:
            s.objects[s.held] = s.eef.copy()
        elif contact is not None:
            s.objects[contact] = np.clip(s.objects[contact] + delta, 0.0, 1.0)
        s.t += 1
        return self.observe()

    @property
    def goal_reached(self) -> bool:
        return goal_check(self.state, self.goal_terms, self.sites)


def goal_check(state: EnvState, goal, sites) -> bool:
    terms = parse_goal(goal) if isinstance(goal, str) else goal
    for _, obj, site in terms:
        center, radius = sites[site]
        if np.linalg.norm(state.objects[obj] - center) > radius:
            return False
    return True


# ---------------------------------------------------------------------------
# scripted expert


def scripted_demo(
    env: ManipulationEnv,
    program: list[Primitive],
    seed: int,
    demo_id: str,
    task_id: str,
    act_noise: float = 0.002,
    proto_index: dict[str, int] | None = None,
) -> Demonstration:
    """Execute a primitive program with a proportional controller.

    The demo ends on the first frame whose action satisfies the goal; raises
    InfeasibleProgram if the goal is not reached within the horizon.
    """
    env.reset(seed)
    arng = np.random.default_rng([seed, 991])
    frames: list[Frame] = []
    prev_phase = None

    def emit(target: np.ndarray | None, grip: float) -> None:
        nonlocal prev_phase
        feature, proprio = env.observe()
        kind, param = env.phase()
        key = f"{kind}:{param}"
        gt = proto_index.get(key, -1) if proto_index is not None else None
        boundary = prev_phase is not None and key != prev_phase
        prev_phase = key
        if target is None:
            d = np.zeros(2)
        else:
            d = np.clip(target - env.state.eef, -env.step_max, env.step_max)
        if act_noise > 0:
            d = d + arng.normal(0.0, act_noise, size=2)
        action = np.array([d[0], d[1], grip])
        frames.append(
            Frame(
                t=len(frames),
                feature=feature,
                proprio=proprio,
                action=action,
                gt_skill=gt,
                gt_boundary=bool(boundary) if gt is not None else None,
            )
        )
        env.step(action)

    def guard() -> None:
        if len(frames) >= env.horizon - 1:
            raise InfeasibleProgram(f"{demo_id}: horizon {env.horizon} exhausted")

    for prim in program:
        if prim.kind == "reach":
            while np.linalg.norm(env.state.eef - env.state.objects[prim.obj]) > 0.012:
                guard()
                obj = env.state.objects[prim.obj]
                dist = float(np.linalg.norm(env.state.eef - obj))
                # Decelerate on final approach and ramp the grip shut with
                # distance, so the grip command is a smooth function of
                # position that local imitators can recover.
                target = env.state.eef + 0.4 * (obj - env.state.eef) if dist < 0.1 else obj
                grip = float(np.clip(1.0 - (dist - 0.03) / 0.03, -1.0, 1.0))
                emit(target, grip)
                if env.state.held == prim.obj:
                    break
        elif prim.kind == "grasp":
            guard()
            emit(None, 1.0)
            if env.state.held != prim.obj:
                raise InfeasibleProgram(f"{demo_id}: grasp of {prim.obj} failed")
        elif prim.kind == "transport":
            center, radius = env.sites[prim.site]
            while np.linalg.norm(env.state.objects[env.state.held] - center) > radius * 0.4:
                guard()
                dist = float(np.linalg.norm(env.state.eef - center))
                # Decelerate into the site so nearby demonstrations brake too.
                target = env.state.eef + 0.4 * (center - env.state.eef) if dist < 0.15 else center
                emit(target, 1.0)
                if env.goal_reached:
                    break
        elif prim.kind == "release":
            guard()
            emit(None, -1.0)
        elif prim.kind == "push":
            # Close only to contact range: once inside it the object moves
            # with the hand, so chasing the object's center cannot converge.
            while np.linalg.norm(env.state.eef - env.state.objects[prim.obj]) > env.contact_radius:
                guard()
                emit(env.state.objects[prim.obj], 1.0)
            center, radius = env.sites[prim.site]
            while np.linalg.norm(env.state.objects[prim.obj] - center) > radius * 0.6:
                guard()
                # Steer so the object (not the hand) converges on the site.
                emit(env.state.eef + (center - env.state.objects[prim.obj]), 1.0)
                if env.goal_reached:
                    break
        else:
            raise ValueError(f"unknown primitive kind {prim.kind!r}")
        if env.goal_reached:
            break

    if not env.goal_reached:
        raise InfeasibleProgram(f"{demo_id}: program finished without reaching the goal")
    if len(frames) < 2:
        raise InfeasibleProgram(f"{demo_id}: degenerate demo of length {len(frames)}")
    return Demonstration(demo_id=demo_id, task_id=task_id, frames=tuple(frames))


# ---------------------------------------------------------------------------
# suite generation


@dataclass
class GeneratorSpec:
    suite_id: str = "synth-default"
    mode: str = "mixed"  # mixed | push
    n_objects: int = 2
    n_base: int = 4
    n_lifelong: int = 6
    demos_per_task: int = 10
    novel_lifelong: tuple[int, ...] = (2, 5)  # 1-based lifelong steps adding a push skill
    feature_dim: int = 32
    lang_dim: int = 8
    gamma: float = 0.1
    noise: float = 0.02
    act_noise: float = 0.002
    horizon: int = 80
    jitter: float = 0.02


def _layout(spec: GeneratorSpec) -> tuple[dict, dict]:
    n = spec.n_objects
    objects = {}
    sites = {}
    names = [chr(ord("A") + i) for i in range(n)]
    for i, name in enumerate(names):
        # objects on the upper arc, sites on the lower arc
        ang = np.pi * (0.1 + 0.8 * (i / max(n - 1, 1)))
        objects[f"obj{name}"] = np.array(
            [0.5 + 0.32 * np.cos(ang), 0.55 + 0.32 * np.sin(ang)]
        )
        sites[f"site{i + 1}"] = (
            np.array([0.2 + 0.6 * (i / max(n - 1, 1)), 0.15]),
            SITE_RADIUS,
        )
    return objects, sites


def _program_keys(program: list[Primitive]) -> list[str]:
    keys = []
    for p in program:
        if p.kind == "reach":
            keys.append(f"reach:{p.obj}")
        elif p.kind == "transport":
            keys.append(f"transport:{p.obj}")
        elif p.kind == "push":
            keys.append(f"push:{p.obj}")
    return keys


@dataclass
class TaskPlan:
    task_id: str
    order: int
    stage: str
    program: list[Primitive]
    goal_id: str
    eef_start: np.ndarray
    init_gripper_closed: bool
    novel: bool = False


def _plan_tasks(spec: GeneratorSpec, objects: dict, sites: dict) -> list[TaskPlan]:
    obj_ids = sorted(objects)
    site_ids = sorted(sites)
    start = np.array([0.5, 0.45])

    def pick_plan(task_id, order, stage, oi, si):
        obj, site = obj_ids[oi % len(obj_ids)], site_ids[si % len(site_ids)]
        prog = [
            Primitive("reach", obj=obj),
            Primitive("grasp", obj=obj),
            Primitive("transport", obj=obj, site=site),
        ]
        return TaskPlan(task_id, order, stage, prog, f"in_site:{obj}:{site}", start, False)

    def push_plan(task_id, order, stage, oi, si, novel=False):
        obj, site = obj_ids[oi % len(obj_ids)], site_ids[si % len(site_ids)]
        prog = [Primitive("push", obj=obj, site=site)]
        # Start just behind the target object (away from the site) so the
        # closed-gripper approach never strays nearer to another object.
        u = objects[obj] - sites[site][0]
        u = u / np.linalg.norm(u)
        pstart = np.clip(objects[obj] + 0.07 * u, 0.05, 0.95)
        return TaskPlan(task_id, order, stage, prog, f"in_site:{obj}:{site}", pstart, True, novel=novel)

    plans: list[TaskPlan] = []
    if spec.mode == "push":
        for i in range(spec.n_base):
            plans.append(push_plan(f"base_push_{i + 1}", i + 1, "base", i, i))
        return plans

    combos = [(0, 0), (1, 1), (0, 1), (1, 0), (0, 0), (1, 1)]
    for i in range(spec.n_base):
        oi, si = combos[i % len(combos)]
        plans.append(pick_plan(f"base_pick_{i + 1}", i + 1, "base", oi, si))
    novel_used = 0
    for s in range(1, spec.n_lifelong + 1):
        order = spec.n_base + s
        if s in spec.novel_lifelong:
            plans.append(
                push_plan(f"life_push_{s}", order, "lifelong", novel_used, 1 - novel_used % 2, novel=True)
            )
            novel_used += 1
        else:
            oi, si = combos[(s + 1) % len(combos)]
            plans.append(pick_plan(f"life_pick_{s}", order, "lifelong", oi, si))
    return plans


def build_suite(spec: GeneratorSpec, seed: int):
    """Construct a suite in memory; returns (suite, scene_dict, oracle_dict)."""
    objects, sites = _layout(spec)
    plans = _plan_tasks(spec, objects, sites)

    all_keys = sorted({k for p in plans for k in _program_keys(p.program)})
    proto_seed = seed
    while True:
        fm = FeatureModel(spec.feature_dim, spec.gamma, spec.noise, proto_seed, keys=all_keys)
        if fm.max_abs_cos(all_keys) <= 0.3:
            break
        proto_seed += 1
    proto_index = {k: i for i, k in enumerate(all_keys)}

    tasks = []
    for plan in plans:
        init_seed = seed * 100000 + plan.order * 1000
        demos = []
        for di in range(spec.demos_per_task):
            env = ManipulationEnv(
                objects,
                sites,
                fm,
                plan.goal_id,
                plan.eef_start,
                init_gripper_closed=plan.init_gripper_closed,
                horizon=spec.horizon,
                jitter=spec.jitter,
            )
            demo = scripted_demo(
                env,
                plan.program,
                seed=init_seed + 100 + di,
                demo_id=f"{plan.task_id}_d{di:02d}",
                task_id=plan.task_id,
                act_noise=spec.act_noise,
                proto_index=proto_index,
            )
            demos.append(demo)
        lang_rng = np.random.default_rng([seed, 77, plan.order])
        lang = lang_rng.normal(size=spec.lang_dim)
        lang /= np.linalg.norm(lang)
        tasks.append(
            TaskSpec(
                task_id=plan.task_id,
                order=plan.order,
                stage=plan.stage,
                language_embedding=lang,
                goal_id=plan.goal_id,
                init_seed=init_seed,
                horizon=spec.horizon,
                demos=tuple(demos),
            )
        )

    suite = Suite(
        suite_id=spec.suite_id,
        tasks=tuple(tasks),
        dims=Dims(F=spec.feature_dim, P=3, A=3, L=spec.lang_dim),
    )

    scene = {
        "objects": {k: [float(x) for x in v] for k, v in objects.items()},
        "sites": {k: {"center": [float(x) for x in c], "radius": r} for k, (c, r) in sites.items()},
        "feature": {
            "dim": spec.feature_dim,
            "gamma": spec.gamma,
            "noise": spec.noise,
            "proto_seed": proto_seed,
        },
        "jitter": spec.jitter,
        "prototype_keys": all_keys,
        "tasks": {
            p.task_id: {
                "program": [
                    {"kind": pr.kind, "obj": pr.obj, "site": pr.site} for pr in p.program
                ],
                "eef_start": [float(x) for x in p.eef_start],
                "init_gripper_closed": p.init_gripper_closed,
                "act_noise": spec.act_noise,
            }
            for p in plans
        },
    }

    # True skill count after the base stage and after each lifelong step.
    seen = set()
    for p in plans:
        if p.stage == "base":
            seen.update(_program_keys(p.program))
    true_k = [len(seen)]
    for p in plans:
        if p.stage == "lifelong":
            seen.update(_program_keys(p.program))
            true_k.append(len(seen))
    oracle = {
        "true_k_per_step": true_k,
        "novel_orders": [p.order for p in plans if p.novel],
        "prototype_index": proto_index,
    }
    return suite, scene, oracle


def generate_suite(spec: GeneratorSpec, seed: int, out_dir: str) -> str:
    """Write a generated suite (manifest, demos, scene, oracle); returns manifest path."""
    suite, scene, oracle = build_suite(spec, seed)
    manifest = save_suite(suite, out_dir)
    with open(os.path.join(out_dir, "scene.json"), "w", encoding="utf-8") as fh:
        json.dump(scene, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "oracle.json"), "w", encoding="utf-8") as fh:
        json.dump(oracle, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_scene(suite_dir: str) -> dict:
    with open(os.path.join(suite_dir, "scene.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def env_for_task(scene: dict, task: TaskSpec) -> ManipulationEnv:
    """Evaluation-time environment factory for a task of a generated suite."""
    fmcfg = scene["feature"]
    fm = FeatureModel(
        fmcfg["dim"],
        fmcfg["gamma"],
        fmcfg["noise"],
        fmcfg["proto_seed"],
        keys=scene["prototype_keys"],
    )
    trec = scene["tasks"][task.task_id]
    return ManipulationEnv(
        objects={k: np.asarray(v) for k, v in scene["objects"].items()},
        sites={k: (np.asarray(v["center"]), v["radius"]) for k, v in scene["sites"].items()},
        feature_model=fm,
        goal_id=task.goal_id,
        eef_start=np.asarray(trec["eef_start"]),
        init_gripper_closed=trec["init_gripper_closed"],
        horizon=task.horizon,
        jitter=scene["jitter"],
    )
