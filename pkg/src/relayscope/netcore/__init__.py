from .dns import (
    DnsEncodeError,
    DnsError,
    DnsMessage,
    DnsParseError,
    EcsOption,
    Edns,
    GenericOption,
    QType,
    Question,
    Rcode,
    ResourceRecord,
    decode_dns,
    encode_dns,
    make_query,
)
from .prefix import Attribution, IpPrefix, PrefixTable, address_key, ip, lpm_lookup, parse_pfx2as
from .quic import VersionNegotiation, build_vn, build_vn_probe, parse_vn, version_name

__all__ = [
    "Attribution", "DnsEncodeError", "DnsError", "DnsMessage", "DnsParseError", "EcsOption",
    "Edns", "GenericOption", "IpPrefix", "PrefixTable", "QType", "Question", "Rcode",
    "ResourceRecord", "VersionNegotiation", "address_key", "build_vn", "build_vn_probe",
    "decode_dns", "encode_dns", "ip", "lpm_lookup", "make_query", "parse_pfx2as", "parse_vn",
    "version_name",
]
