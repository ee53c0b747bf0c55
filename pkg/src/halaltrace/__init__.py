"""Permissioned proof-of-stake ledger for halal food supply-chain
traceability: signed stage records, QR-coded products, verifiable
end-to-end provenance reports."""

__version__ = "0.1.0"
