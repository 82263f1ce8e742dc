"""The sentinel in action: threshold shutdown and the never-ending-job reaper.

Two tenants get separate blocks; one block takes a heat injection, the other
runs a job that would never terminate on its own.

Run:  python demos/sentinel_watch.py
"""

import tempfile

from clusterblocks.clock import FakeClock
from clusterblocks.domain import NodeRecord, NodeSpecClass
from clusterblocks.fleet.jobs import FailureMode, SimJobScript, build_job_archive
from clusterblocks.gateway.config import GatewayConfig
from clusterblocks.gateway.service import GatewayService

HOUR = 3600.0
ADMIN = "demo-secret"


def lease_block(service, description, nodes, hours):
    app_id = service.submit_registration("Demo", "d@e", description, nodes)["app_id"]
    review = service.admin_review(
        ADMIN, app_id, {"decision": "approve", "node_count": nodes, "period_hours": hours}
    )
    token = review["access_token"]
    confirmed = service.confirm(app_id, token)
    return app_id, token, review["assignment"], confirmed["master_node"]


def main() -> None:
    clock = FakeClock(start=0.0)
    workdir = tempfile.mkdtemp(prefix="clusterblocks-sentinel-")
    nodes = [
        NodeRecord(node_id=f"n{i:02d}", spec=NodeSpecClass("medium", 4, 512)) for i in range(6)
    ]
    service = GatewayService(
        GatewayConfig(data_dir=workdir, admin_secret=ADMIN), clock=clock, nodes=nodes
    )

    hot_app, _, hot_nodes, hot_master = lease_block(service, "heat test", 3, 2)
    run_app, run_token, run_nodes, _ = lease_block(service, "runaway exercise", 3, 2)
    print("hot block:", hot_nodes, "| runaway block:", run_nodes)

    print("\n-- temperature threshold --")
    victim = next(n for n in hot_nodes if n != hot_master)
    service.cluster.inject_temperature_offset(victim, 50.0)  # 75 C > 60 C threshold
    print(f"injected +50C on {victim}")
    for action in service.sentinel.tick():
        print("tick action:", action.kind.value, action.target, "|", action.cause)
    for entry in service.cluster_snapshot()["nodes"]:
        if entry["node_id"] in hot_nodes:
            print(f"  {entry['node_id']}: power={entry['power']} temp={entry['temperature_c']}")
    hot_state = next(
        v["state"] for v in service.list_applications(ADMIN) if v["app_id"] == hot_app
    )
    print("the block keeps its surviving nodes; its application is still", hot_state)

    print("\n-- runaway job reaped at period end --")
    archive = build_job_archive(SimJobScript(1, "spin", FailureMode.RUNAWAY))
    job_id = service.upload_job(run_app, run_token, archive, "mpich2")["job_id"]
    service.execute_job(run_token, job_id)
    print("runaway job started:", job_id)
    clock.advance(1 * HOUR)
    service.sentinel.tick()
    print("1h later, still:", service.job_status(run_token, job_id)["state"])
    clock.advance(1 * HOUR + 5)
    for action in service.sentinel.tick():
        print("tick action:", action.kind.value, action.target, "|", action.cause)
    status = service.job_status(run_token, job_id)
    print("job now:", status["state"], "-", status.get("diagnostic"))
    print("application:", service.get_application(run_app, run_token)["state"])
    on_now = [n["node_id"] for n in service.cluster_snapshot()["nodes"] if n["power"] == "on"]
    print("nodes still on:", on_now or "none")

    print("\naudit action log lines were written ahead of every action:")
    with open(service.config.action_log_path()) as fh:
        for line in fh:
            print(" ", line.rstrip())


if __name__ == "__main__":
    main()
