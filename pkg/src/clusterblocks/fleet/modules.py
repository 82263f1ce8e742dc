"""Environment-module manifest: named PATH-style environment switches.

A manifest entry is applied uniformly across a block and must be exactly
invertible, so application is guarded: a set variable must not already
exist and a prepended segment must not already be present. Under those
guards remove(apply(env, m), m) == env holds structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ClusterError


class UnknownModule(ClusterError):
    code = "unknown_module"


class ModuleCollision(ClusterError):
    code = "module_collision"


@dataclass(frozen=True)
class ModuleManifestEntry:
    name: str
    env_sets: dict[str, str] = field(default_factory=dict)
    env_prepends: dict[str, str] = field(default_factory=dict)


def apply_module(env: dict[str, str], entry: ModuleManifestEntry) -> dict[str, str]:
    """Return env with the entry applied; raises ModuleCollision if not cleanly invertible."""
    result = dict(env)
    for var, value in entry.env_sets.items():
        if var in result:
            raise ModuleCollision(f"module {entry.name} would shadow existing variable {var}")
        result[var] = value
    for var, segment in entry.env_prepends.items():
        current = result.get(var, "")
        if segment in current.split(":"):
            raise ModuleCollision(
                f"module {entry.name} segment {segment} already present in {var}"
            )
        result[var] = f"{segment}:{current}" if current else segment
    return result


def remove_module(env: dict[str, str], entry: ModuleManifestEntry) -> dict[str, str]:
    """Exact structural inverse of apply_module."""
    result = dict(env)
    for var, value in entry.env_sets.items():
        if result.get(var) != value:
            raise ModuleCollision(f"variable {var} no longer holds module {entry.name}'s value")
        del result[var]
    for var, segment in entry.env_prepends.items():
        current = result.get(var)
        if current == segment:
            del result[var]
        elif current is not None and current.startswith(segment + ":"):
            result[var] = current[len(segment) + 1 :]
        else:
            raise ModuleCollision(
                f"{var} does not start with module {entry.name}'s segment {segment}"
            )
    return result


def _flavor(name: str) -> ModuleManifestEntry:
    return ModuleManifestEntry(
        name=name,
        env_prepends={
            "PATH": f"/opt/parallel/{name}/bin",
            "LD_LIBRARY_PATH": f"/opt/parallel/{name}/lib",
        },
    )


# Four parallel-environment flavors, differing only in their prepends.
DEFAULT_MANIFEST: dict[str, ModuleManifestEntry] = {
    entry.name: entry
    for entry in (_flavor("mpich1"), _flavor("mpich2"), _flavor("lam-mpi"), _flavor("pvm"))
}


def manifest_entry(manifest: dict[str, ModuleManifestEntry], name: str) -> ModuleManifestEntry:
    try:
        return manifest[name]
    except KeyError:
        raise UnknownModule(f"no module named {name!r} in the manifest") from None
