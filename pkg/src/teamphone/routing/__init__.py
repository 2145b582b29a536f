"""Messaging-node routing: reactive discovery with gateways, store-and-forward, opportunistic carry."""
