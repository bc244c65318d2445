"""Binary-safe multipart/form-data parsing with the standard library."""

from __future__ import annotations


class MultipartError(ValueError):
    pass


def boundary_from_content_type(content_type: str) -> bytes:
    if not content_type.lower().startswith("multipart/"):
        raise MultipartError(f"expected a multipart content type, got {content_type!r}")
    for piece in content_type.split(";")[1:]:
        key, _, value = piece.strip().partition("=")
        if key.lower() == "boundary":
            return value.strip().strip('"').encode("ascii")
    raise MultipartError("content type carries no boundary parameter")


def parse_multipart(body: bytes, content_type: str) -> dict[str, bytes]:
    """Return {part-name: payload} for a multipart/form-data body."""
    delim = b"--" + boundary_from_content_type(content_type)
    sections = body.split(delim)
    if len(sections) < 3:
        raise MultipartError("no parts found in multipart body")
    parts: dict[str, bytes] = {}
    for section in sections[1:]:
        if section.startswith(b"--"):
            break  # closing delimiter
        section = section.lstrip(b"\r\n")
        headers, sep, payload = section.partition(b"\r\n\r\n")
        if not sep:
            raise MultipartError("part without a blank line after its headers")
        name = None
        for line in headers.split(b"\r\n"):
            if line.lower().startswith(b"content-disposition") and b"name=" in line:
                name = line.split(b"name=", 1)[1].split(b";", 1)[0].strip().strip(b'"').decode("utf-8", "replace")
        if name is None:
            raise MultipartError("part without a content-disposition name")
        parts[name] = payload[:-2] if payload.endswith(b"\r\n") else payload
    return parts
