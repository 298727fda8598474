from ._echoplan import *  # noqa: F401,F403
