"""Role-based command authorization and client-side job acceptance.

Policies are plain data so deployments can redefine the role->rights mapping.
Everything not explicitly granted is denied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

VIEW = "view"
JOB_OPS = "job_ops"
SYSTEM_OPS = "system_ops"

DEFAULT_COMMAND_CATEGORIES = {
    "check_status": VIEW,
    "list_jobs": VIEW,
    "list_clients": VIEW,
    "download_job_result": VIEW,
    "submit_job": JOB_OPS,
    "abort_job": JOB_OPS,
    "clone_job": JOB_OPS,
    "set_timeout": JOB_OPS,
    "shutdown_client": SYSTEM_OPS,
    "shutdown_system": SYSTEM_OPS,
}

DEFAULT_ROLE_RIGHTS = {
    "project_admin": [VIEW, JOB_OPS, SYSTEM_OPS],
    "org_admin": [VIEW, JOB_OPS],
    "lead": [VIEW, JOB_OPS],
    "member": [VIEW],
}


@dataclass
class AuthzPolicy:
    role_rights: dict = field(default_factory=lambda: {
        role: list(rights) for role, rights in DEFAULT_ROLE_RIGHTS.items()})
    command_categories: dict = field(default_factory=lambda: dict(
        DEFAULT_COMMAND_CATEGORIES))
    # client-side: role of the job submitter -> "any" | "same_org"
    job_acceptance: dict = field(default_factory=lambda: {
        role: "any" for role in DEFAULT_ROLE_RIGHTS})

    @classmethod
    def from_dict(cls, raw: dict) -> "AuthzPolicy":
        policy = cls()
        if "role_rights" in raw:
            policy.role_rights = {r: list(v) for r, v in raw["role_rights"].items()}
        if "command_categories" in raw:
            policy.command_categories = dict(raw["command_categories"])
        if "job_acceptance" in raw:
            policy.job_acceptance = dict(raw["job_acceptance"])
        return policy

    def to_dict(self) -> dict:
        return {"role_rights": self.role_rights,
                "command_categories": self.command_categories,
                "job_acceptance": self.job_acceptance}


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str

    def __bool__(self) -> bool:
        return self.allowed


def authorize(role: str, command: str, policy: Optional[AuthzPolicy] = None) -> Decision:
    """Pure decision: may this role run this command?  Deny by default."""
    policy = policy or AuthzPolicy()
    category = policy.command_categories.get(command)
    if category is None:
        return Decision(False, f"unknown command {command!r}")
    rights = policy.role_rights.get(role)
    if not rights:
        return Decision(False, f"role {role!r} has no rights")
    if category not in rights:
        return Decision(False,
                        f"role {role!r} lacks {category!r} needed by {command!r}")
    return Decision(True, f"role {role!r} grants {category!r}")


def client_accepts_job(submitter_org: str, submitter_role: str, client_org: str,
                       policy: Optional[AuthzPolicy] = None) -> Decision:
    """Client-local gate on deploying a job from this submitter."""
    policy = policy or AuthzPolicy()
    rule = policy.job_acceptance.get(submitter_role)
    if rule is None:
        return Decision(False, f"no acceptance rule for role {submitter_role!r}")
    if rule == "any":
        return Decision(True, "accepts jobs from any org")
    if rule == "same_org":
        if submitter_org == client_org:
            return Decision(True, "submitter belongs to this org")
        return Decision(False,
                        f"submitter org {submitter_org!r} != site org {client_org!r}")
    return Decision(False, f"unknown acceptance rule {rule!r}")
