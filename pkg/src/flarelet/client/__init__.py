from .executor import AbortSignal, Executor, ExecutorBinding, execute_task
from .resources import ResourceManager
from .runtime import ClientConfig, ClientRuntime
