from .controller import ControllerContext, Workflow
from .jobs import (ABORTED, DONE, FAILED, JobConfigError, JobDefinition,
                   JobMeta, JobStore, QUEUED, RUNNING, TERMINAL_JOB_STATES,
                   UNSCHEDULABLE, load_job_dir, unzip_job_files, write_job_dir,
                   zip_job_files)
from .runtime import FederatedServer, ServerSettings
from .scheduler import ResourceGateway, Scheduler
from .snapshot import SnapshotStore
from .tasks import (AssignmentState, JobAborted, NoClients, Task,
                    TaskAssignment, TaskManager)
