from rest_framework.renderers import JSONRenderer

EXIT_OK = 0
EXIT_PIPELINE_ERROR = 1
EXIT_USAGE_ERROR = 2


class CommandResponse:
    """
    Standardised subcommand summary.

    Every subcommand prints exactly one line built through one of these
    class methods so the summary envelope is always consistent.

    Success shape:
    {"success": true, "message": "...", "data": {...}, "exit_code": 0}

    Error shape:
    {"success": false, "message": "...", "errors": {...}, "exit_code": 1}
    """

    renderer = JSONRenderer()

    @classmethod
    def render(cls, payload):
        return cls.renderer.render(payload).decode("utf-8")

    @classmethod
    def success(cls, data=None, message="Command completed."):
        payload = {
            "success": True,
            "message": message,
            "data": data if data is not None else {},
            "exit_code": EXIT_OK,
        }
        return cls.render(payload)

    @classmethod
    def error(cls, message="Command failed.", errors=None, exit_code=EXIT_PIPELINE_ERROR):
        payload = {
            "success": False,
            "message": message,
            "errors": errors if errors is not None else {},
            "exit_code": exit_code,
        }
        return cls.render(payload)

    @classmethod
    def usage(cls, message="Unknown subcommand."):
        return cls.error(message=message, exit_code=EXIT_USAGE_ERROR)
