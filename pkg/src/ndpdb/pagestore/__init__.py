"""Storage-side service: versioned pages plus the NDP plugin."""

from .admission import NdpAdmission
from .cache import DescriptorCache, DescriptorMiss
from .node import InProcessEndpoint, PageStoreConfig, PageStoreNode
from .pipeline import (
    CompiledDescriptor,
    PageDraft,
    PipelineError,
    Visibility,
    check_visibility,
    cross_page_aggregate,
    ndp_process_page,
)
from .protocol import BatchReadRequest, DescriptorMode, MsgType, PageResult, PageStatus
from .server import PageStoreServer, TcpEndpoint, parse_address

__all__ = [
    "BatchReadRequest",
    "CompiledDescriptor",
    "DescriptorCache",
    "DescriptorMiss",
    "DescriptorMode",
    "InProcessEndpoint",
    "MsgType",
    "NdpAdmission",
    "PageDraft",
    "PageResult",
    "PageStatus",
    "PageStoreConfig",
    "PageStoreNode",
    "PageStoreServer",
    "PipelineError",
    "TcpEndpoint",
    "Visibility",
    "check_visibility",
    "cross_page_aggregate",
    "ndp_process_page",
    "parse_address",
]
