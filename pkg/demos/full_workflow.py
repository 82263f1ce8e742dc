"""Walk the complete anonymous-user workflow against a live in-process gateway.

Boots the gateway on a loopback port with a controllable clock, then drives:
register -> admin approve -> confirm -> upload -> execute -> download ->
fast-forward 48h -> automatic expiry. Prints every stage.

Run:  python demos/full_workflow.py
"""

import io
import tarfile
import threading
import time

import httpx
import uvicorn

from clusterblocks.clock import FakeClock
from clusterblocks.domain import NodeRecord, NodeSpecClass
from clusterblocks.fleet.jobs import SimJobScript, build_job_archive
from clusterblocks.gateway.api import create_app
from clusterblocks.gateway.config import GatewayConfig
from clusterblocks.gateway.service import GatewayService

ADMIN = {"X-Admin-Secret": "demo-secret"}


def banner(text: str) -> None:
    print(f"\n=== {text} ===")


def demo_inventory() -> list[NodeRecord]:
    tiers = [
        NodeSpecClass("small", 2, 256),
        NodeSpecClass("medium", 4, 512),
        NodeSpecClass("large", 8, 1024),
        NodeSpecClass("xlarge", 16, 2048),
    ]
    return [
        NodeRecord(node_id=f"n{i:02d}", spec=tiers[min(i // 3, 3)]) for i in range(10)
    ]


def main() -> None:
    clock = FakeClock(start=1_700_000_000.0)
    config = GatewayConfig(
        listen="127.0.0.1:8423", data_dir="/tmp/clusterblocks-demo", admin_secret="demo-secret"
    )
    service = GatewayService(config, clock=clock, nodes=demo_inventory())
    server = uvicorn.Server(
        uvicorn.Config(create_app(service), host=config.host, port=config.port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.02)

    base = f"http://{config.listen}"
    with httpx.Client(base_url=base) as http:
        banner("1. anonymous registration")
        app_id = http.post(
            "/applications",
            json={
                "name": "Demo User",
                "contact": "demo@example.org",
                "job_description": "learning message passing with a toy heat solver",
                "nodes_requested": 3,
            },
        ).json()["app_id"]
        print("application:", app_id)

        banner("2. admin reviews and approves (3 nodes, 48 hours)")
        review = http.post(
            f"/admin/applications/{app_id}/review",
            json={"decision": "approve", "node_count": 3, "period_hours": 48},
            headers=ADMIN,
        ).json()
        token = review["access_token"]
        print("assigned:", review["assignment"], "fitness:", review["fitness"])
        auth = {"Authorization": f"Bearer {token}"}

        banner("3. user confirms; the block powers on")
        confirmed = http.post(f"/applications/{app_id}/confirm", headers=auth).json()
        print("block:", confirmed["block_id"], "master:", confirmed["master_node"])
        snapshot = http.get("/cluster").json()
        print("powered on:", [n["node_id"] for n in snapshot["nodes"] if n["power"] == "on"])

        banner("4. user adapts their program to the assigned nodes")
        print("available environments:", snapshot["environments"])

        banner("5. upload the program bundle and execute it")
        archive = build_job_archive(
            SimJobScript(declared_runtime_s=2, declared_output="heat grid converged"),
            payload={"solver.py": b"# pretend MPI program\n"},
        )
        job_id = http.post(
            f"/applications/{app_id}/jobs",
            files={"archive": ("job.tar", archive, "application/octet-stream")},
            data={"environment": "mpich2"},
            headers=auth,
        ).json()["job_id"]
        print("job:", job_id)
        print("execute:", http.post(f"/jobs/{job_id}/execute", headers=auth).json())

        banner("6. monitoring while it runs")
        service.sentinel.tick()
        print("status now:", http.get(f"/jobs/{job_id}", headers=auth).json()["state"])
        clock.advance(3)
        print("after 3 simulated seconds:", http.get(f"/jobs/{job_id}", headers=auth).json())

        banner("7. owner downloads the collected results")
        artifact = http.get(f"/jobs/{job_id}/result", headers=auth).content
        with tarfile.open(fileobj=io.BytesIO(artifact)) as tar:
            for name in sorted(tar.getnames()):
                first_line = tar.extractfile(name).read().decode().splitlines()[0]
                print(f"  {name}: {first_line}")

        banner("8. fast-forward 48 hours; the sentinel powers the block off")
        clock.advance(48 * 3600)
        actions = service.sentinel.tick()
        for action in actions:
            print("sentinel:", action.kind.value, action.target, "-", action.cause)
        print("application state:", http.get(f"/applications/{app_id}", headers=auth).json()["state"])
        snapshot = http.get("/cluster").json()
        print("powered on now:", [n["node_id"] for n in snapshot["nodes"] if n["power"] == "on"])

    server.should_exit = True
    thread.join(timeout=5)
    print("\ndone.")


if __name__ == "__main__":
    main()
