from .audit import AuditLog
from .auth import PeerIdentity, authenticate_inbound, authenticate_outbound
from .authz import (AuthzPolicy, Decision, JOB_OPS, SYSTEM_OPS, VIEW,
                    authorize, client_accepts_job)
from .provision import (Certificate, ProvisionError, StartupKit, canonical,
                        provision)
from .tokens import TokenError, mint_token, verify_token

__all__ = [
    "AuditLog", "AuthzPolicy", "Certificate", "Decision", "JOB_OPS",
    "PeerIdentity", "ProvisionError", "SYSTEM_OPS", "StartupKit",
    "TokenError", "VIEW", "authenticate_inbound", "authenticate_outbound",
    "authorize", "canonical", "client_accepts_job", "mint_token", "provision",
    "verify_token",
]
