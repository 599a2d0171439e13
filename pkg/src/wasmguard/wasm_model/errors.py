class WasmError(Exception):
    pass


class MalformedBinary(WasmError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset:#x})"
        super().__init__(message)


class UnsupportedFeature(WasmError):
    def __init__(self, feature: str, offset: int | None = None):
        self.feature = feature
        self.offset = offset
        where = f" at byte offset {offset:#x}" if offset is not None else ""
        super().__init__(f"unsupported feature: {feature}{where}")


class EncodingOverflow(WasmError):
    pass


class MissingExport(WasmError):
    pass


class UnstubbedImport(WasmError):
    def __init__(self, module: str, name: str):
        self.module = module
        self.name = name
        super().__init__(f"import {module}.{name} has no stub")
