"""Fixed-size segmentation of opaque content."""

from typing import BinaryIO, List, Union

from minidrm.core.errors import DrmError, ErrorCode


def segment_content(content: Union[bytes, BinaryIO], segment_size: int) -> List[bytes]:
    """Split content into ``segment_size`` byte segments.

    Parameters
    ----------
    content : bytes or binary file object
        Input stream; file objects are read to the end
    segment_size : int
        Segment length in bytes (>= 1); only the last segment may be shorter

    Returns
    -------
    list of bytes
        Segments whose concatenation equals the input; empty for empty input

    Raises
    ------
    DrmError
        ``CONFIG`` if ``segment_size`` is not positive

    Examples
    --------
    >>> [len(s) for s in segment_content(b"0123456789", 4)]
    [4, 4, 2]
    """
    if segment_size < 1:
        raise DrmError(ErrorCode.CONFIG, f"segment_size must be >= 1, got {segment_size}")

    if isinstance(content, (bytes, bytearray, memoryview)):
        data = bytes(content)
        return [data[i : i + segment_size] for i in range(0, len(data), segment_size)]

    segments = []
    while True:
        chunk = content.read(segment_size)
        if not chunk:
            break
        # short reads are legal on pipes; top up to a full segment
        while len(chunk) < segment_size:
            more = content.read(segment_size - len(chunk))
            if not more:
                break
            chunk += more
        segments.append(bytes(chunk))
    return segments
